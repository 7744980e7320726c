//! Segmentation losses over probability maps.

use crate::autograd::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::scalar::Scalar;

pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-5;
pub const BCE_WEIGHT: f64 = 0.5;
pub const DICE_WEIGHT: f64 = 1.0;

fn check_pair<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var) -> Result<()> {
    ensure_dim!(
        tape.shape(pred) == tape.shape(target),
        "prediction {:?} and target {:?} differ in shape",
        tape.shape(pred),
        tape.shape(target)
    );
    Ok(())
}

/// `1 − x`.
fn complement<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let neg = tape.mul_scalar(x, -T::one())?;
    tape.add_scalar(neg, T::one())
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    check_pair(tape, pred, target)?;
    let p = tape.clamp(pred, T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP))?;
    let log_p = tape.log(p)?;
    let q = complement(tape, p)?;
    let log_q = tape.log(q)?;
    let not_y = complement(tape, target)?;
    let pos = tape.mul(target, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let total = tape.add(pos, neg)?;
    let mean = tape.mean(total)?;
    tape.mul_scalar(mean, -T::one())
}

/// `1 − (2Σyŷ + ε) / (Σy² + Σŷ² + ε)` over the whole tensor.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    check_pair(tape, pred, target)?;
    let yp = tape.mul(target, pred)?;
    let inter = tape.sum(yp)?;
    let yy = tape.mul(target, target)?;
    let yy = tape.sum(yy)?;
    let pp = tape.mul(pred, pred)?;
    let pp = tape.sum(pp)?;
    let num = tape.mul_scalar(inter, T::lit(2.0))?;
    let num = tape.add_scalar(num, T::lit(eps))?;
    let den = tape.add(yy, pp)?;
    let den = tape.add_scalar(den, T::lit(eps))?;
    let ratio = tape.div(num, den)?;
    complement(tape, ratio)
}

/// `0.5·BCE + Dice`.
pub fn combined_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let bce = bce_loss(tape, pred, target)?;
    let dice = dice_loss(tape, pred, target, DICE_EPS)?;
    let bce = tape.mul_scalar(bce, T::lit(BCE_WEIGHT))?;
    let dice = tape.mul_scalar(dice, T::lit(DICE_WEIGHT))?;
    tape.add(bce, dice)
}
