use super::{Binding, Init, Mode, Module, Registry};
use crate::autograd::{Conv2dGeometry, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: Conv2dGeometry,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: Conv2dGeometry,
        bias: bool,
    ) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            geom,
            bias,
        }
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(name, cin, cout, 1, Conv2dGeometry::pointwise(), bias)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let w = bind.param(tape, &self.weight_name())?;
        let b = if self.bias {
            Some(bind.param(tape, &self.bias_name())?)
        } else {
            None
        };
        tape.conv2d(x, w, b, self.geom)
    }
}

impl Module for Conv2d {
    fn register(&self, reg: &mut Registry) {
        let groups = self.geom.groups.max(1);
        let fan_in = self.in_channels / groups * self.kernel * self.kernel;
        reg.param(
            self.weight_name(),
            vec![self.out_channels, self.in_channels / groups, self.kernel, self.kernel],
            Init::KaimingNormal { fan_in },
        );
        if self.bias {
            reg.param(self.bias_name(), vec![self.out_channels], Init::Zeros);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let gamma = bind.param(tape, &format!("{}.weight", self.name))?;
        let beta = bind.param(tape, &format!("{}.bias", self.name))?;
        let eps = T::lit(BN_EPS);
        match bind.mode() {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta, eps)?;
                bind.record_stats(&self.name, stats);
                Ok(y)
            }
            Mode::Eval => {
                let mean = bind.buffer(&format!("{}.running_mean", self.name))?.data().to_vec();
                let var = bind.buffer(&format!("{}.running_var", self.name))?.data().to_vec();
                tape.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}

impl Module for BatchNorm2d {
    fn register(&self, reg: &mut Registry) {
        reg.param(format!("{}.weight", self.name), vec![self.channels], Init::Ones);
        reg.param(format!("{}.bias", self.name), vec![self.channels], Init::Zeros);
        reg.buffer(format!("{}.running_mean", self.name), vec![self.channels], 0.0);
        reg.buffer(format!("{}.running_var", self.name), vec![self.channels], 1.0);
    }
}

/// Affine map `[N, In] -> [N, Out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub init: Init,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.into(),
            in_features,
            out_features,
            init: Init::Uniform {
                bound: 1.0 / (in_features as f64).sqrt(),
            },
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let w = bind.param(tape, &format!("{}.weight", self.name))?;
        let b = bind.param(tape, &format!("{}.bias", self.name))?;
        tape.linear(x, w, Some(b))
    }
}

impl Module for Linear {
    fn register(&self, reg: &mut Registry) {
        reg.param(
            format!("{}.weight", self.name),
            vec![self.out_features, self.in_features],
            self.init,
        );
        reg.param(format!("{}.bias", self.name), vec![self.out_features], Init::Zeros);
    }
}

/// Convolution, batch norm, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBnRelu {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: Conv2dGeometry,
        relu: bool,
    ) -> Self {
        Self {
            conv: Conv2d::new(format!("{name}.conv"), cin, cout, kernel, geom, false),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, bind, x)?;
        let y = self.bn.forward(tape, bind, y)?;
        Ok(if self.relu { tape.relu(y) } else { y })
    }
}

impl Module for ConvBnRelu {
    fn register(&self, reg: &mut Registry) {
        self.conv.register(reg);
        self.bn.register(reg);
    }
}

/// Depth-wise separable convolution: per-channel 3×3, pointwise mix, BN, ReLU.
/// Both convolutions are bias-free since BN removes per-channel offsets.
#[derive(Clone, Debug)]
pub struct DsConv {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
    pub bn: BatchNorm2d,
}

impl DsConv {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        Self {
            depthwise: Conv2d::new(
                format!("{name}.dw"),
                cin,
                cin,
                3,
                Conv2dGeometry::new(1, 1, cin),
                false,
            ),
            pointwise: Conv2d::pointwise(format!("{name}.pw"), cin, cout, false),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(tape, bind, x)?;
        let y = self.pointwise.forward(tape, bind, y)?;
        let y = self.bn.forward(tape, bind, y)?;
        Ok(tape.relu(y))
    }
}

impl Module for DsConv {
    fn register(&self, reg: &mut Registry) {
        self.depthwise.register(reg);
        self.pointwise.register(reg);
        self.bn.register(reg);
    }
}
