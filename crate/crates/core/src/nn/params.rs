/// A named, shaped view of one parameter (or gradient) tensor.
#[derive(Debug)]
pub struct Block<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct BlockMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

/// Anything that owns parameter tensors: layers, models, and their gradient
/// mirrors. Implementations of a layer and of its gradient type list blocks
/// in the same order with the same shapes.
pub trait ParamSet {
    fn blocks(&self, prefix: &str) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>>;

    fn num_params(&self) -> usize {
        self.blocks("").iter().map(|b| b.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks("")
            .iter()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `dst += scale * src`, block by block.
pub fn add_scaled<A: ParamSet + ?Sized, B: ParamSet + ?Sized>(dst: &mut A, src: &B, scale: f64) {
    let src = src.blocks("");
    let dst = dst.blocks_mut("");
    assert_eq!(src.len(), dst.len(), "parameter block count mismatch");
    for (d, s) in dst.into_iter().zip(src) {
        assert_eq!(d.shape, s.shape, "block {} shape mismatch", d.name);
        for (x, y) in d.data.iter_mut().zip(s.data) {
            *x += scale * y;
        }
    }
}

pub fn scale_all<A: ParamSet + ?Sized>(set: &mut A, scale: f64) {
    for b in set.blocks_mut("") {
        b.data.iter_mut().for_each(|v| *v *= scale);
    }
}

pub fn fill<A: ParamSet + ?Sized>(set: &mut A, value: f64) {
    for b in set.blocks_mut("") {
        b.data.fill(value);
    }
}

pub fn global_norm<A: ParamSet + ?Sized>(set: &A) -> f64 {
    set.blocks("")
        .iter()
        .flat_map(|b| b.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Every parameter value, block order, flattened. Handy for bit-exact
/// comparisons.
pub fn flatten<A: ParamSet + ?Sized>(set: &A) -> Vec<f64> {
    set.blocks("")
        .iter()
        .flat_map(|b| b.data.iter().copied())
        .collect()
}
