//! Region-scale box alignment, plus the pixel-wise box Dice used by the baseline.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::nn::{Real, Tensor};

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

/// Differentiable stand-in for the bounding box of a probability map.
///
/// `rows[y] = max_x p(x, y)`, `cols[x] = max_y p(x, y)` and the box field is
/// their outer product. For a binary map supported on a filled rectangle the
/// field is exactly that rectangle's indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftBox<T> {
    pub rows: Vec<T>,
    pub cols: Vec<T>,
    /// Column index of each row maximum (first on ties).
    pub row_argmax: Vec<usize>,
    /// Row index of each column maximum (first on ties).
    pub col_argmax: Vec<usize>,
    pub field: Tensor<T>,
}

pub fn soft_bounding_box<T: Real>(seg_prob: &Tensor<T>) -> SoftBox<T> {
    let (h, w) = (seg_prob.height, seg_prob.width);
    let p = seg_prob.channel(0);
    let mut rows = vec![T::ZERO; h];
    let mut row_argmax = vec![0usize; h];
    let mut cols = vec![T::ZERO; w];
    let mut col_argmax = vec![0usize; w];
    for y in 0..h {
        let line = &p[y * w..(y + 1) * w];
        let (mut best, mut arg) = (line[0], 0);
        for (x, &v) in line.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = x;
            }
        }
        rows[y] = best;
        row_argmax[y] = arg;
    }
    for x in 0..w {
        let (mut best, mut arg) = (p[x], 0);
        for y in 1..h {
            let v = p[y * w + x];
            if v > best {
                best = v;
                arg = y;
            }
        }
        cols[x] = best;
        col_argmax[x] = arg;
    }
    let mut field = Tensor::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            field.data[y * w + x] = rows[y] * cols[x];
        }
    }
    SoftBox {
        rows,
        cols,
        row_argmax,
        col_argmax,
        field,
    }
}

/// Scalar loss with its gradient w.r.t. the probability map.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWithGrad<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn check_dims<T: Real>(p: &Tensor<T>, label: &BinaryMask) -> Result<()> {
    if p.channels != 1 || p.height != label.height() || p.width != label.width() {
        return Err(Error::DimensionMismatch {
            left_w: p.width,
            left_h: p.height,
            right_w: label.width(),
            right_h: label.height(),
        });
    }
    Ok(())
}

/// `1 - (2 sum(a y) + eps) / (sum(a) + sum(y) + eps)` and `d/da`.
fn soft_dice_loss<T: Real>(a: &[T], label: &BinaryMask) -> (T, Vec<T>) {
    let eps = T::from_f64(DICE_EPS);
    let two = T::from_f64(2.0);
    let (mut inter, mut sa) = (T::ZERO, T::ZERO);
    let mut sy = 0usize;
    for (&v, &y) in a.iter().zip(label.bits()) {
        sa += v;
        if y {
            inter += v;
            sy += 1;
        }
    }
    let num = two * inter + eps;
    let den = sa + T::from_f64(sy as f64) + eps;
    let loss = T::ONE - num / den;
    let den2 = den * den;
    let grad = label
        .bits()
        .iter()
        .map(|&y| {
            let dnum = if y { two } else { T::ZERO };
            -(dnum * den - num) / den2
        })
        .collect();
    (loss, grad)
}

/// Soft Dice between the prediction's soft box and the box label, as a loss.
///
/// The gradient reaches the probability map only through the argmax pixel of
/// each row and column profile.
pub fn alignment_loss<T: Real>(seg_prob: &Tensor<T>, box_label: &BinaryMask) -> Result<LossWithGrad<T>> {
    check_dims(seg_prob, box_label)?;
    let (h, w) = (seg_prob.height, seg_prob.width);
    let sb = soft_bounding_box(seg_prob);
    let (value, d_field) = soft_dice_loss(&sb.field.data, box_label);
    let mut grad = Tensor::zeros(1, h, w);
    for y in 0..h {
        let d_row: T = (0..w).map(|x| d_field[y * w + x] * sb.cols[x]).sum();
        grad.data[y * w + sb.row_argmax[y]] += d_row;
    }
    for x in 0..w {
        let d_col: T = (0..h).map(|y| d_field[y * w + x] * sb.rows[y]).sum();
        grad.data[sb.col_argmax[x] * w + x] += d_col;
    }
    Ok(LossWithGrad { value, grad })
}

/// Pixel-wise soft Dice loss of the probability map against the box label.
pub fn box_dice_loss<T: Real>(seg_prob: &Tensor<T>, box_label: &BinaryMask) -> Result<LossWithGrad<T>> {
    check_dims(seg_prob, box_label)?;
    let (value, g) = soft_dice_loss(&seg_prob.data, box_label);
    Ok(LossWithGrad {
        value,
        grad: Tensor::from_vec(1, seg_prob.height, seg_prob.width, g)?,
    })
}
