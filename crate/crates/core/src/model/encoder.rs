use crate::autograd::{Conv2dGeometry, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, ConvBnRelu, Module, Registry};
use crate::scalar::Scalar;

/// Input extents must be multiples of the deepest stride.
pub const ENCODER_STRIDE: usize = 32;

/// Two 3×3 convolutions with an identity (or projected) shortcut.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: ConvBnRelu,
    conv2: ConvBnRelu,
    downsample: Option<ConvBnRelu>,
}

impl BasicBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || cin != cout).then(|| {
            ConvBnRelu::new(
                &format!("{name}.downsample"),
                cin,
                cout,
                1,
                Conv2dGeometry::new(stride, 0, 1),
                false,
            )
        });
        Self {
            conv1: ConvBnRelu::new(
                &format!("{name}.conv1"),
                cin,
                cout,
                3,
                Conv2dGeometry::new(stride, 1, 1),
                true,
            ),
            conv2: ConvBnRelu::new(
                &format!("{name}.conv2"),
                cout,
                cout,
                3,
                Conv2dGeometry::new(1, 1, 1),
                false,
            ),
            downsample,
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, bind, x)?;
        let y = self.conv2.forward(tape, bind, y)?;
        let shortcut = match &self.downsample {
            Some(d) => d.forward(tape, bind, x)?,
            None => x,
        };
        let sum = tape.add(y, shortcut)?;
        Ok(tape.relu(sum))
    }
}

impl Module for BasicBlock {
    fn register(&self, reg: &mut Registry) {
        self.conv1.register(reg);
        self.conv2.register(reg);
        if let Some(d) = &self.downsample {
            d.register(reg);
        }
    }
}

/// Four-stage residual encoder (ResNet-18 topology at configurable widths).
#[derive(Clone, Debug)]
pub struct Encoder {
    pub prefix: String,
    stem: ConvBnRelu,
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn new(prefix: &str, widths: [usize; 4]) -> Self {
        let stem = ConvBnRelu::new(
            &format!("{prefix}.stem"),
            3,
            widths[0],
            7,
            Conv2dGeometry::new(2, 3, 1),
            true,
        );
        let mut stages = Vec::with_capacity(4);
        let mut cin = widths[0];
        for (s, &w) in widths.iter().enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            let name = format!("{prefix}.layer{}", s + 1);
            stages.push(vec![
                BasicBlock::new(&format!("{name}.0"), cin, w, stride),
                BasicBlock::new(&format!("{name}.1"), w, w, 1),
            ]);
            cin = w;
        }
        Self {
            prefix: prefix.to_string(),
            stem,
            stages,
        }
    }

    /// `[N, 3, H, W]` to feature maps at strides 4, 8, 16 and 32.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        img: Var,
    ) -> Result<[Var; 4]> {
        let (_, c, h, w) = tape.value(img).dims4()?;
        check_input_extent(c, h, w)?;
        let x = self.stem.forward(tape, bind, img)?;
        let mut x = tape.max_pool2d(x, 3, 2, 1)?;
        let mut out = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(tape, bind, x)?;
            }
            out.push(x);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }
}

impl Module for Encoder {
    fn register(&self, reg: &mut Registry) {
        self.stem.register(reg);
        for block in self.stages.iter().flatten() {
            block.register(reg);
        }
    }
}

pub fn check_input_extent(channels: usize, h: usize, w: usize) -> Result<()> {
    if channels != 3 {
        return Err(Error::shape(format!("expected 3-channel images, got {channels}")));
    }
    if h == 0 || w == 0 || !h.is_multiple_of(ENCODER_STRIDE) || !w.is_multiple_of(ENCODER_STRIDE) {
        return Err(Error::shape(format!(
            "image extent {h}x{w} is not a positive multiple of {ENCODER_STRIDE}"
        )));
    }
    Ok(())
}
