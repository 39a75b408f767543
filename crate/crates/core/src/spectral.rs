//! DCT bases, frequency index sets and the frequency-domain channel gate.
//!
//! All transforms here are the unnormalised type-II form:
//! `B[u,v](i, j) = cos(π u (i + ½) / H) · cos(π v (j + ½) / W)`.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, Init, Linear, Mode, Module, ParamStore, Registry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Component counts evaluated by the ablation harness.
pub const STANDARD_COMPONENT_COUNTS: [usize; 4] = [4, 8, 16, 32];

pub const DEFAULT_BASE_GRID: usize = 7;

/// One `H×W` cosine-product basis matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DctBasis<T> {
    pub u: usize,
    pub v: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> DctBasis<T> {
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[i * self.width + j]
    }
}

pub fn dct_basis<T: Scalar>(height: usize, width: usize, u: usize, v: usize) -> Result<DctBasis<T>> {
    if height == 0 || width == 0 {
        return Err(Error::shape(format!("empty basis extent {height}x{width}")));
    }
    if u >= height {
        return Err(Error::Index {
            axis: "row (u)",
            index: u,
            extent: height,
        });
    }
    if v >= width {
        return Err(Error::Index {
            axis: "column (v)",
            index: v,
            extent: width,
        });
    }
    let rows: Vec<f64> = (0..height)
        .map(|i| (PI * u as f64 * (i as f64 + 0.5) / height as f64).cos())
        .collect();
    let cols: Vec<f64> = (0..width)
        .map(|j| (PI * v as f64 * (j as f64 + 0.5) / width as f64).cos())
        .collect();
    let values = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| T::lit(r * c)))
        .collect();
    Ok(DctBasis {
        u,
        v,
        height,
        width,
        values,
    })
}

/// Full spectrum by the direct double sum; `x` is `height×width` row-major.
///
/// Cost is `O(H²W²)`. This is the reference every fast path is checked against.
pub fn dct2_reference<T: Scalar>(x: &[T], height: usize, width: usize) -> Result<Vec<T>> {
    if x.len() != height * width {
        return Err(Error::shape(format!(
            "dct2_reference: {} values for {height}x{width}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dct2_reference input".into()));
    }
    let mut out = vec![T::zero(); height * width];
    for h in 0..height {
        for w in 0..width {
            let mut acc = 0.0;
            for i in 0..height {
                let ch = (PI * h as f64 * (i as f64 + 0.5) / height as f64).cos();
                for j in 0..width {
                    let cw = (PI * w as f64 * (j as f64 + 0.5) / width as f64).cos();
                    acc += x[i * width + j].as_f64() * ch * cw;
                }
            }
            out[h * width + w] = T::lit(acc);
        }
    }
    Ok(out)
}

/// Ordered 2D frequency indices on a base grid, one per channel part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyIndexSet {
    base_height: usize,
    base_width: usize,
    indices: Vec<(usize, usize)>,
}

impl FrequencyIndexSet {
    pub fn new(base_height: usize, base_width: usize, indices: Vec<(usize, usize)>) -> Result<Self> {
        if base_height == 0 || base_width == 0 {
            return Err(Error::Validation("base grid must be non-empty".into()));
        }
        if indices.is_empty() {
            return Err(Error::Validation("frequency index set is empty".into()));
        }
        let mut seen = HashSet::new();
        for &(u, v) in &indices {
            if u >= base_height {
                return Err(Error::Index {
                    axis: "row (u)",
                    index: u,
                    extent: base_height,
                });
            }
            if v >= base_width {
                return Err(Error::Index {
                    axis: "column (v)",
                    index: v,
                    extent: base_width,
                });
            }
            if !seen.insert((u, v)) {
                return Err(Error::Validation(format!("duplicate frequency index ({u}, {v})")));
            }
        }
        Ok(Self {
            base_height,
            base_width,
            indices,
        })
    }

    /// The first `n` cells of the base grid by ascending `u + v`, then `u`, then `v`.
    pub fn default_order(n: usize, base_height: usize, base_width: usize) -> Result<Self> {
        let mut all: Vec<(usize, usize)> = (0..base_height)
            .flat_map(|u| (0..base_width).map(move |v| (u, v)))
            .collect();
        if n > all.len() {
            return Err(Error::Config(format!(
                "{n} frequency components requested from a {base_height}x{base_width} grid"
            )));
        }
        all.sort_by_key(|&(u, v)| (u + v, u, v));
        all.truncate(n);
        Self::new(base_height, base_width, all)
    }

    /// Parses `u v` lines; `#` starts a comment.
    pub fn parse(text: &str, n: usize, base_height: usize, base_width: usize) -> Result<Self> {
        let mut indices = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields[..] {
                [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
                _ => None,
            };
            let pair = parsed.ok_or_else(|| {
                Error::Validation(format!("line {}: expected `u v`, got {raw:?}", lineno + 1))
            })?;
            indices.push(pair);
        }
        if indices.len() != n {
            return Err(Error::CountMismatch {
                expected: n,
                found: indices.len(),
            });
        }
        Self::new(base_height, base_width, indices)
    }

    pub fn from_file(path: &Path, n: usize, base_height: usize, base_width: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n, base_height, base_width)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# {} frequency indices on a {}x{} grid\n",
            self.len(),
            self.base_height,
            self.base_width
        );
        for (u, v) in &self.indices {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn base_grid(&self) -> (usize, usize) {
        (self.base_height, self.base_width)
    }

    /// Integer factors mapping base-grid indices onto an `h×w` map (at least 1).
    pub fn scale_factors(&self, h: usize, w: usize) -> (usize, usize) {
        ((h / self.base_height).max(1), (w / self.base_width).max(1))
    }

    /// Indices rescaled to an `h×w` feature map and clamped into range.
    pub fn effective(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let (sh, sw) = self.scale_factors(h, w);
        self.indices
            .iter()
            .map(|&(u, v)| ((u * sh).min(h - 1), (v * sw).min(w - 1)))
            .collect()
    }

    /// Same set with its parts reordered by `perm` (new part `i` = old part `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::CountMismatch {
                expected: self.len(),
                found: perm.len(),
            });
        }
        Self::new(
            self.base_height,
            self.base_width,
            perm.iter().map(|&p| self.indices[p]).collect(),
        )
    }
}

/// Where frequency indices come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrequencySource {
    DefaultOrder,
    File(std::path::PathBuf),
}

pub fn select_frequencies(
    n: usize,
    source: &FrequencySource,
    base_height: usize,
    base_width: usize,
) -> Result<FrequencyIndexSet> {
    if n == 0 {
        return Err(Error::Config("frequency component count must be at least 1".into()));
    }
    if !STANDARD_COMPONENT_COUNTS.contains(&n) {
        log::warn!("{n} frequency components is outside the standard set {STANDARD_COMPONENT_COUNTS:?}");
    }
    match source {
        FrequencySource::DefaultOrder => FrequencyIndexSet::default_order(n, base_height, base_width),
        FrequencySource::File(path) => FrequencyIndexSet::from_file(path, n, base_height, base_width),
    }
}

type BasisKey = (usize, usize, usize, usize);

/// Thread-safe memo of basis matrices keyed by `(H, W, u, v)`.
#[derive(Debug, Default)]
pub struct BasisCache<T> {
    inner: RwLock<HashMap<BasisKey, Arc<Vec<T>>>>,
}

impl<T: Scalar> BasisCache<T> {
    pub fn new() -> Self {
        Self {
            inner: RwLock::new(HashMap::new()),
        }
    }

    pub fn get(&self, h: usize, w: usize, u: usize, v: usize) -> Result<Arc<Vec<T>>> {
        let key = (h, w, u, v);
        if let Some(b) = self.inner.read().expect("basis cache poisoned").get(&key) {
            return Ok(Arc::clone(b));
        }
        let basis = Arc::new(dct_basis::<T>(h, w, u, v)?.values);
        let mut guard = self.inner.write().expect("basis cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(basis)))
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("basis cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn part_bases<T: Scalar>(
    channels: usize,
    h: usize,
    w: usize,
    idx: &FrequencyIndexSet,
    cache: &BasisCache<T>,
) -> Result<Vec<Arc<Vec<T>>>> {
    let n = idx.len();
    if !channels.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "{channels} channels are not divisible into {n} frequency parts"
        )));
    }
    idx.effective(h, w)
        .into_iter()
        .map(|(u, v)| cache.get(h, w, u, v))
        .collect()
}

/// Per-channel frequency coefficients, the concatenation of all parts.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyVector<T> {
    pub values: Vec<T>,
}

/// Frequency vector of one `C×H×W` feature map.
pub fn fem_frequency_vector<T: Scalar>(
    x: &Tensor<T>,
    idx: &FrequencyIndexSet,
    cache: &BasisCache<T>,
) -> Result<FrequencyVector<T>> {
    let (c, h, w) = x.dims3()?;
    x.ensure_finite("frequency input")?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone().unsqueeze0());
    let f = frequency_pool(&mut tape, xv, idx, cache)?;
    debug_assert_eq!(tape.value(f).shape(), [1, c]);
    let _ = (h, w);
    Ok(FrequencyVector {
        values: tape.value(f).data().to_vec(),
    })
}

/// Tape op: `[N, C, H, W] -> [N, C]`, channel `c` of part `c / (C/n)` projected
/// onto that part's (rescaled) basis.
pub fn frequency_pool<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    idx: &FrequencyIndexSet,
    cache: &BasisCache<T>,
) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let bases = part_bases(c, h, w, idx, cache)?;
    let per_part = c / idx.len();
    let hw = h * w;
    let xv = tape.value(x).data();
    let mut out = Tensor::zeros([n, c]);
    for (plane, o) in out.data_mut().iter_mut().enumerate() {
        let basis = &bases[(plane % c) / per_part];
        *o = xv[plane * hw..(plane + 1) * hw]
            .iter()
            .zip(basis.iter())
            .map(|(&a, &b)| a * b)
            .sum();
    }
    Ok(tape.push_op(
        out,
        &[x],
        Box::new(move |ctx| {
            let mut gx = Tensor::zeros([n, c, h, w]);
            for (plane, (dst, &g)) in gx.data_mut().chunks_mut(hw).zip(ctx.grad.data()).enumerate() {
                let basis = &bases[(plane % c) / per_part];
                dst.iter_mut().zip(basis.iter()).for_each(|(d, &b)| *d = g * b);
            }
            vec![Some(gx)]
        }),
    ))
}

/// Frequency-domain enhancement: `X ⊙ sigmoid(fc(Freq(X)))` broadcast over space.
#[derive(Clone, Debug)]
pub struct Fem {
    pub name: String,
    pub channels: usize,
    pub indices: FrequencyIndexSet,
    pub gate: Linear,
}

impl Fem {
    pub fn new(name: &str, channels: usize, indices: FrequencyIndexSet) -> Result<Self> {
        if !channels.is_multiple_of(indices.len()) {
            return Err(Error::Config(format!(
                "{channels} channels are not divisible into {} frequency parts",
                indices.len()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            channels,
            gate: Linear::new(format!("{name}.gate"), channels, channels)
                .with_init(Init::Zeros),
            indices,
        })
    }

    /// Returns `(output, gate)`, the gate shaped `[N, C]`.
    pub fn forward_with_gate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        x: Var,
        cache: &BasisCache<T>,
    ) -> Result<(Var, Var)> {
        let freq = frequency_pool(tape, x, &self.indices, cache)?;
        let z = self.gate.forward(tape, bind, freq)?;
        let gate = tape.sigmoid(z);
        let out = tape.mul_channel(x, gate)?;
        Ok((out, gate))
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        x: Var,
        cache: &BasisCache<T>,
    ) -> Result<Var> {
        self.forward_with_gate(tape, bind, x, cache).map(|(y, _)| y)
    }
}

impl Module for Fem {
    fn register(&self, reg: &mut Registry) {
        self.gate.register(reg);
    }
}

/// Gates a single `C×H×W` map with explicit `C×C` weight and `C` bias.
pub fn fem_forward<T: Scalar>(
    x: &Tensor<T>,
    idx: &FrequencyIndexSet,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, _, _) = x.dims3()?;
    x.ensure_finite("fem input")?;
    let fem = Fem::new("fem", c, idx.clone())?;
    let mut store = ParamStore::new();
    store.insert_param("fem.gate.weight", weight.clone());
    store.insert_param("fem.gate.bias", bias.clone());
    let cache = BasisCache::new();
    let mut tape = Tape::new();
    let mut bind = Binding::new(&store, Mode::Eval, false);
    let xv = tape.constant(x.clone().unsqueeze0());
    let y = fem.forward(&mut tape, &mut bind, xv, &cache)?;
    tape.value(y).clone().reshape(x.shape().to_vec())
}
