//! Flat parameter storage with a named layout.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::NetConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
    #[serde(skip)]
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Zeros,
    Ones,
    Uniform,
}

/// Entry ids of one LSTM layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub w_x: usize,
    pub w_h: usize,
    pub bias: usize,
    pub ln_gain: usize,
    pub ln_offset: usize,
    pub input: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetIndex {
    pub encoder: Vec<LstmIds>,
    pub decoder: Vec<LstmIds>,
    pub action_embed: usize,
    pub att_query: usize,
    pub att_key: usize,
    pub att_bias: usize,
    pub att_v: usize,
    pub policy: HeadIds,
    pub value: HeadIds,
}

/// Ordered tensor table derived from a [`NetConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub config: NetConfig,
    pub entries: Vec<ParamEntry>,
    pub index: NetIndex,
    total: usize,
}

/// Uniform init half-width for weight matrices.
pub const INIT_SCALE: f64 = 0.08;

impl ParamLayout {
    pub fn new(config: &NetConfig) -> Result<Arc<Self>> {
        config.validate()?;
        let mut entries: Vec<ParamEntry> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            let offset = entries.last().map_or(0, |e| e.offset + e.len());
            entries.push(ParamEntry {
                name,
                shape,
                offset,
                init,
            });
            entries.len() - 1
        };
        let h = config.hidden;
        let lstm = |prefix: &str, layer: usize, input: usize, push: &mut dyn FnMut(String, Vec<usize>, Init) -> usize| LstmIds {
            w_x: push(format!("{prefix}.{layer}.w_x"), vec![4 * h, input], Init::Uniform),
            w_h: push(format!("{prefix}.{layer}.w_h"), vec![4 * h, h], Init::Uniform),
            bias: push(format!("{prefix}.{layer}.bias"), vec![4 * h], Init::Zeros),
            ln_gain: push(format!("{prefix}.{layer}.ln_gain"), vec![4 * h], Init::Ones),
            ln_offset: push(format!("{prefix}.{layer}.ln_offset"), vec![4 * h], Init::Zeros),
            input,
        };
        let encoder = (0..config.layers)
            .map(|l| lstm("encoder", l, if l == 0 { config.input_width } else { h }, &mut push))
            .collect();
        let decoder = (0..config.layers)
            .map(|l| lstm("decoder", l, if l == 0 { config.decoder_input() } else { h }, &mut push))
            .collect();
        let a = config.attention_hidden;
        let action_embed = push("decoder.action_embed".into(), vec![3, config.action_embed], Init::Uniform);
        let att_query = push("attention.query".into(), vec![a, h], Init::Uniform);
        let att_key = push("attention.key".into(), vec![a, h], Init::Uniform);
        let att_bias = push("attention.bias".into(), vec![a], Init::Zeros);
        let att_v = push("attention.v".into(), vec![a], Init::Uniform);
        let k = config.head_hidden;
        let mut head = |name: &str, out: usize| HeadIds {
            w1: push(format!("{name}.w1"), vec![k, h], Init::Uniform),
            b1: push(format!("{name}.b1"), vec![k], Init::Zeros),
            w2: push(format!("{name}.w2"), vec![out, k], Init::Uniform),
            b2: push(format!("{name}.b2"), vec![out], Init::Zeros),
        };
        let policy = head("policy", 2);
        let value = head("value", 1);
        let total = entries.last().map_or(0, |e| e.offset + e.len());
        Ok(Arc::new(ParamLayout {
            config: config.clone(),
            entries,
            index: NetIndex {
                encoder,
                decoder,
                action_embed,
                att_query,
                att_key,
                att_bias,
                att_v,
                policy,
                value,
            },
            total,
        }))
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let e = &self.entries[id];
        e.offset..e.offset + e.len()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// The network's parameters (or a gradient with the same layout).
#[derive(Debug, Clone)]
pub struct PolicyParams<T: Scalar> {
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: Scalar> PartialEq for PolicyParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layout.entries == other.layout.entries && self.data == other.data
    }
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total()];
        PolicyParams { layout, data }
    }

    /// Uniform weights, zero biases, unit layer-norm gains.
    pub fn init(layout: Arc<ParamLayout>, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(layout.clone());
        for (id, e) in layout.entries.iter().enumerate() {
            let r = layout.range(id);
            for x in &mut p.data[r] {
                *x = match e.init {
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                    Init::Uniform => T::of(rng.gen_range(-INIT_SCALE..=INIT_SCALE)),
                };
            }
        }
        p
    }

    pub fn from_flat(layout: Arc<ParamLayout>, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, layout needs {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(PolicyParams { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }

    pub fn flat(&self) -> &[T] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, id: usize) -> &[T] {
        &self.data[self.layout.range(id)]
    }

    #[inline]
    pub fn get_mut(&mut self, id: usize) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    fn check(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout.entries == other.layout.entries {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }

    /// `self - other`
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect();
        Ok(PolicyParams {
            layout: self.layout.clone(),
            data,
        })
    }

    /// `self += alpha * other`
    pub fn scaled_add(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * *b;
        }
        Ok(())
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|x| *x * *x).sum::<T>().sqrt()
    }

    /// Named views of every tensor.
    pub fn named(&self) -> impl Iterator<Item = (&ParamEntry, &[T])> {
        self.layout
            .entries
            .iter()
            .enumerate()
            .map(move |(id, e)| (e, self.get(id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn tiny() -> NetConfig {
        NetConfig {
            input_width: 6,
            hidden: 4,
            layers: 2,
            action_embed: 3,
            attention_hidden: 5,
            head_hidden: 4,
            layer_norm: true,
            aligned_input: false,
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let l = ParamLayout::new(&tiny()).unwrap();
        let mut off = 0;
        for e in &l.entries {
            assert_eq!(e.offset, off);
            off += e.len();
        }
        assert_eq!(off, l.total());
        assert_eq!(l.entries[l.index.encoder[0].w_x].shape, vec![16, 6]);
        assert_eq!(l.entries[l.index.decoder[0].w_x].shape, vec![16, 7]);
        assert!(l.find("value.b2").is_some());
        let a = ParamLayout::new(&NetConfig { aligned_input: true, ..tiny() }).unwrap();
        assert_eq!(a.entries[a.index.decoder[0].w_x].shape, vec![16, 11]);
    }

    #[test]
    fn init_respects_kinds() {
        let l = ParamLayout::new(&tiny()).unwrap();
        let p = PolicyParams::<f64>::init(l.clone(), &mut rng::stream(1, &[]));
        for (e, v) in p.named() {
            match e.init {
                Init::Zeros => assert!(v.iter().all(|&x| x == 0.0), "{}", e.name),
                Init::Ones => assert!(v.iter().all(|&x| x == 1.0), "{}", e.name),
                Init::Uniform => assert!(v.iter().all(|&x| x.abs() <= INIT_SCALE), "{}", e.name),
            }
        }
    }

    #[test]
    fn mismatched_layouts_rejected() {
        let a = PolicyParams::<f64>::zeros(ParamLayout::new(&tiny()).unwrap());
        let b = PolicyParams::<f64>::zeros(ParamLayout::new(&NetConfig { hidden: 3, ..tiny() }).unwrap());
        assert!(matches!(a.difference(&b), Err(Error::Shape(_))));
        assert!(PolicyParams::<f64>::from_flat(a.layout().clone(), vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn difference_then_add_reproduces(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let l = ParamLayout::new(&tiny()).unwrap();
            let a = PolicyParams::<f64>::init(l.clone(), &mut rng::stream(seed_a, &[]));
            let b = PolicyParams::<f64>::init(l.clone(), &mut rng::stream(seed_b, &[7]));
            let d = b.difference(&a).unwrap();
            let mut back = a.clone();
            back.scaled_add(1.0, &d).unwrap();
            // a + (b - a) is within one rounding of b for arbitrary reals
            for ((x, y), z) in back.flat().iter().zip(b.flat()).zip(a.flat()) {
                prop_assert!((x - y).abs() <= f64::EPSILON * y.abs().max(z.abs()));
            }
            let flat = back.clone().into_flat();
            prop_assert_eq!(PolicyParams::from_flat(l, flat).unwrap(), back);
        }

        #[test]
        fn difference_then_add_is_exact_on_a_dyadic_grid(seed in 0u64..1000) {
            let l = ParamLayout::new(&tiny()).unwrap();
            let mut r = rng::stream(seed, &[]);
            let mut grid = |_: usize| f64::from(rand::Rng::gen_range(&mut r, -4096i32..4096)) / 1024.0;
            let a = PolicyParams::from_flat(l.clone(), (0..l.total()).map(&mut grid).collect()).unwrap();
            let b = PolicyParams::from_flat(l.clone(), (0..l.total()).map(&mut grid).collect()).unwrap();
            let mut back = a.clone();
            back.scaled_add(1.0, &b.difference(&a).unwrap()).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
