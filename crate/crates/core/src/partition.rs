//! Grid and block rearrangements used by the global and local MLPs.
//!
//! Both map a `(C, H, W)` feature map to a `(patches, positions, C)`
//! tensor. Patches are numbered row-major over the patch grid and positions
//! row-major within a patch; the FC weights depend on this order.
//!
//! * grid with factor `g`: `g x g` patches, each `H/g x W/g`.
//! * block with size `b`: `H/b x W/b` patches, each `b x b`.

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub g: usize,
    pub h_g: usize,
    pub w_g: usize,
}

impl GridLayout {
    pub fn new(g: usize, h: usize, w: usize) -> Result<Self> {
        divisible("grid", g, h, w)?;
        Ok(GridLayout { g, h_g: h / g, w_g: w / g })
    }

    fn patches(&self) -> Patches {
        Patches {
            ny: self.g,
            nx: self.g,
            sy: self.h_g,
            sx: self.w_g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub b: usize,
    pub h_b: usize,
    pub w_b: usize,
}

impl BlockLayout {
    pub fn new(b: usize, h: usize, w: usize) -> Result<Self> {
        divisible("block", b, h, w)?;
        Ok(BlockLayout { b, h_b: h / b, w_b: w / b })
    }

    fn patches(&self) -> Patches {
        Patches {
            ny: self.h_b,
            nx: self.w_b,
            sy: self.b,
            sx: self.b,
        }
    }
}

fn divisible(what: &'static str, factor: usize, h: usize, w: usize) -> Result<()> {
    for extent in [h, w] {
        if factor == 0 || extent % factor != 0 {
            return Err(Error::Divisibility {
                what,
                factor,
                extent,
                height: h,
                width: w,
            });
        }
    }
    Ok(())
}

/// `ny x nx` patches of `sy x sx` pixels.
#[derive(Debug, Clone, Copy)]
struct Patches {
    ny: usize,
    nx: usize,
    sy: usize,
    sx: usize,
}

impl Patches {
    fn shape(&self, c: usize) -> Vec<usize> {
        vec![self.ny * self.nx, self.sy * self.sx, c]
    }

    /// For each element of the partitioned tensor, its offset in `(C,H,W)`.
    fn gather_index(&self, c: usize) -> Vec<usize> {
        let (h, w) = (self.ny * self.sy, self.nx * self.sx);
        let mut index = Vec::with_capacity(c * h * w);
        for py in 0..self.ny {
            for px in 0..self.nx {
                for qy in 0..self.sy {
                    for qx in 0..self.sx {
                        let (y, x) = (py * self.sy + qy, px * self.sx + qx);
                        index.extend((0..c).map(|ch| (ch * h + y) * w + x));
                    }
                }
            }
        }
        index
    }

    fn scatter_index(&self, c: usize) -> Vec<usize> {
        let forward = self.gather_index(c);
        let mut inverse = vec![0; forward.len()];
        for (i, &src) in forward.iter().enumerate() {
            inverse[src] = i;
        }
        inverse
    }
}

fn apply<T: Real>(x: &Tensor<T>, index: &[usize], shape: Vec<usize>) -> Result<Tensor<T>> {
    let src = x.data();
    Tensor::new(shape, index.iter().map(|&i| src[i]).collect())
}

fn partitioned_dims(t: &[usize], what: &'static str) -> Result<(usize, usize, usize)> {
    match t[..] {
        [p, q, c] => Ok((p, q, c)),
        _ => Err(Error::shape(what, format!("expected (patches, positions, C), got {t:?}"))),
    }
}

fn check_partitioned(shape: &[usize], patches: &Patches, what: &'static str) -> Result<usize> {
    let (p, q, c) = partitioned_dims(shape, what)?;
    if p != patches.ny * patches.nx || q != patches.sy * patches.sx {
        return Err(Error::shape(what, format!("tensor {shape:?} does not match layout {patches:?}")));
    }
    Ok(c)
}

/// `(C,H,W) -> (g*g, H_g*W_g, C)`
pub fn grid<T: Real>(x: &Tensor<T>, g: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let p = GridLayout::new(g, h, w)?.patches();
    apply(x, &p.gather_index(c), p.shape(c))
}

/// Inverse of [`grid`].
pub fn ungrid<T: Real>(t: &Tensor<T>, g: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let p = GridLayout::new(g, h, w)?.patches();
    let c = check_partitioned(t.shape(), &p, "ungrid")?;
    apply(t, &p.scatter_index(c), vec![c, h, w])
}

/// `(C,H,W) -> (H_b*W_b, b*b, C)`
pub fn block<T: Real>(x: &Tensor<T>, b: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let p = BlockLayout::new(b, h, w)?.patches();
    apply(x, &p.gather_index(c), p.shape(c))
}

/// Inverse of [`block`].
pub fn unblock<T: Real>(t: &Tensor<T>, b: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let p = BlockLayout::new(b, h, w)?.patches();
    let c = check_partitioned(t.shape(), &p, "unblock")?;
    apply(t, &p.scatter_index(c), vec![c, h, w])
}

fn chw<T: Real>(g: &Graph<T>, x: Var) -> Result<(usize, usize, usize)> {
    match g.shape(x)[..] {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape("partition", format!("expected (C,H,W), got {s:?}"))),
    }
}

pub fn grid_var<T: Real>(g: &mut Graph<T>, x: Var, factor: usize) -> Result<Var> {
    let (c, h, w) = chw(g, x)?;
    let p = GridLayout::new(factor, h, w)?.patches();
    g.gather(x, Arc::from(p.gather_index(c)), p.shape(c))
}

pub fn ungrid_var<T: Real>(g: &mut Graph<T>, t: Var, factor: usize, h: usize, w: usize) -> Result<Var> {
    let p = GridLayout::new(factor, h, w)?.patches();
    let c = check_partitioned(g.shape(t), &p, "ungrid")?;
    g.gather(t, Arc::from(p.scatter_index(c)), vec![c, h, w])
}

pub fn block_var<T: Real>(g: &mut Graph<T>, x: Var, size: usize) -> Result<Var> {
    let (c, h, w) = chw(g, x)?;
    let p = BlockLayout::new(size, h, w)?.patches();
    g.gather(x, Arc::from(p.gather_index(c)), p.shape(c))
}

pub fn unblock_var<T: Real>(g: &mut Graph<T>, t: Var, size: usize, h: usize, w: usize) -> Result<Var> {
    let p = BlockLayout::new(size, h, w)?.patches();
    let c = check_partitioned(g.shape(t), &p, "unblock")?;
    g.gather(t, Arc::from(p.scatter_index(c)), vec![c, h, w])
}
