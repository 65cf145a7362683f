//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one node per scalar operation. [`Var`] is a cheap
//! `Copy` handle (tape reference, node index, value) with the usual
//! arithmetic operators. Densities and samplers elsewhere in the crate are
//! written against the [`Scalar`] trait, so one implementation runs on plain
//! `f64` and on the tape with bitwise-identical forward values.
//!
//! ```
//! use vinevi::autodiff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! assert_eq!(tape.gradient(y, &[x]).unwrap(), vec![6.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::numerics::{normal_cdf, normal_logpdf, normal_pdf, special_quantile};
use crate::{Error, Result};

/// Numeric type that densities and transforms are generic over.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living in the same context as `self` (same tape).
    fn constant(&self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atanh(self) -> Self;
    fn square(self) -> Self;
    fn normal_cdf(self) -> Self;
    fn normal_quantile(self) -> Self;
    fn normal_logpdf(self) -> Self;
    /// Same value, no gradient flow.
    fn detach(self) -> Self;

    /// `self^p` for a varying exponent, as `exp(p · ln self)`.
    fn pow(self, p: Self) -> Self {
        (self.ln() * p).exp()
    }

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -self + c
    }
    fn recip(self) -> Self {
        self.constant(1.0) / self
    }
    fn powf(self, p: f64) -> Self {
        (self.ln() * p).exp()
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant(&self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atanh(self) -> Self {
        f64::atanh(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn normal_cdf(self) -> Self {
        normal_cdf(self)
    }
    fn normal_quantile(self) -> Self {
        special_quantile(self)
    }
    fn normal_logpdf(self) -> Self {
        normal_logpdf(self)
    }
    fn detach(self) -> Self {
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
}

/// Append-only record of scalar operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<(&'static str, f64)>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps the allocation. Requires that no `Var`
    /// borrowed from this tape is alive.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.fault.set(None);
    }

    /// A new leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(
            value,
            Node {
                parents: [0; 2],
                partials: [0.0; 2],
                arity: 0,
            },
            "var",
        )
    }

    /// A constant: a leaf that callers do not differentiate with respect to.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    /// First domain violation or non-finite value produced on this tape.
    pub fn fault(&self) -> Option<Error> {
        self.fault
            .get()
            .map(|(op, value)| Error::Domain { op, value })
    }

    /// Reverse-mode adjoints of `output` with respect to each of `wrt`.
    /// Leaves with no path to `output` get zero.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<f64>> {
        assert!(
            std::ptr::eq(output.tape, self),
            "output belongs to another tape"
        );
        if let Some(err) = self.fault() {
            return Err(err);
        }
        let nodes = self.nodes.borrow();
        let out = output.index as usize;
        let mut adjoint = vec![0.0; out + 1];
        adjoint[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.arity as usize {
                adjoint[node.parents[k] as usize] += node.partials[k] * a;
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                assert!(
                    std::ptr::eq(w.tape, self),
                    "wrt variable belongs to another tape"
                );
                adjoint.get(w.index as usize).copied().unwrap_or(0.0)
            })
            .collect())
    }

    fn push(&self, value: f64, node: Node, op: &'static str) -> Var<'_> {
        if !value.is_finite() && self.fault.get().is_none() {
            self.fault.set(Some((op, value)));
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(node);
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn domain_fault(&self, op: &'static str, arg: f64) {
        if self.fault.get().is_none() {
            self.fault.set(Some((op, arg)));
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    fn unary(self, value: f64, partial: f64, op: &'static str) -> Self {
        self.tape.push(
            value,
            Node {
                parents: [self.index, 0],
                partials: [partial, 0.0],
                arity: 1,
            },
            op,
        )
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64, op: &'static str) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        self.tape.push(
            value,
            Node {
                parents: [self.index, other.index],
                partials: [da, db],
                arity: 2,
            },
            op,
        )
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(&self) -> f64 {
        self.value
    }

    fn constant(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e, "exp")
    }

    fn ln(self) -> Self {
        if !(self.value > 0.0) {
            self.tape.domain_fault("log", self.value);
        }
        self.unary(self.value.ln(), 1.0 / self.value, "log")
    }

    fn sqrt(self) -> Self {
        if !(self.value >= 0.0) {
            self.tape.domain_fault("sqrt", self.value);
        }
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s, "sqrt")
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t, "tanh")
    }

    fn atanh(self) -> Self {
        if !(self.value.abs() < 1.0) {
            self.tape.domain_fault("atanh", self.value);
        }
        self.unary(
            self.value.atanh(),
            1.0 / (1.0 - self.value * self.value),
            "atanh",
        )
    }

    fn square(self) -> Self {
        self.unary(self.value * self.value, 2.0 * self.value, "square")
    }

    fn normal_cdf(self) -> Self {
        self.unary(normal_cdf(self.value), normal_pdf(self.value), "normal_cdf")
    }

    fn normal_quantile(self) -> Self {
        if !(self.value > 0.0 && self.value < 1.0) {
            self.tape.domain_fault("normal_quantile", self.value);
        }
        let x = special_quantile(self.value);
        // inverse-function rule on the exact function
        self.unary(x, 1.0 / normal_pdf(x), "normal_quantile")
    }

    fn normal_logpdf(self) -> Self {
        self.unary(normal_logpdf(self.value), -self.value, "normal_logpdf")
    }

    fn detach(self) -> Self {
        self.tape.constant(self.value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0, "add")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0, "sub")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value, "mul")
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        if rhs.value == 0.0 {
            self.tape.domain_fault("div", rhs.value);
        }
        let inv = 1.0 / rhs.value;
        let q = self.value / rhs.value;
        self.binary(rhs, q, inv, -q * inv, "div")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0, "neg")
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0, "add")
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0, "sub")
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs, "mul")
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        if rhs == 0.0 {
            self.tape.domain_fault("div", rhs);
        }
        self.unary(self.value / rhs, 1.0 / rhs, "div")
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, -1.0, "sub")
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.value == 0.0 {
            rhs.tape.domain_fault("div", rhs.value);
        }
        let q = self / rhs.value;
        rhs.unary(q, -q / rhs.value, "div")
    }
}

/// Sum of a non-empty slice.
pub fn sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = acc + x;
    }
    acc
}

/// Numerically stable log Σ exp(xᵢ); the running maximum is treated as a
/// constant shift, which leaves the derivative unchanged.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<S> = xs.iter().map(|&x| (x - m).exp()).collect();
    sum(&shifted).ln() + m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x.square();
        assert_eq!(tape.gradient(y, &[x]).unwrap(), vec![6.0]);
    }

    #[test]
    fn product_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(5.0);
        assert_eq!(tape.gradient(x * y, &[x, y]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let c = tape.constant(4.0) * 3.0;
        assert_eq!(tape.gradient(c, &[x]).unwrap(), vec![0.0]);
    }

    #[test]
    fn normal_cdf_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let g = tape.gradient(x.normal_cdf(), &[x]).unwrap()[0];
        assert!((g - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn stop_gradient() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        assert_eq!(tape.gradient(x.detach() * x, &[x]).unwrap(), vec![3.0]);
        assert_eq!(tape.gradient(x.detach(), &[x]).unwrap(), vec![0.0]);
    }

    #[test]
    fn domain_errors_surface_at_gradient() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.ln();
        assert!(matches!(
            tape.gradient(y, &[x]),
            Err(Error::Domain { op: "log", .. })
        ));

        let tape = Tape::new();
        let u = tape.var(1.0);
        let y = u.normal_quantile();
        assert!(matches!(
            tape.gradient(y, &[u]),
            Err(Error::Domain {
                op: "normal_quantile",
                ..
            })
        ));
    }

    #[test]
    fn reset_reuses_tape() {
        let mut tape = Tape::new();
        {
            let x = tape.var(1.0);
            let _ = x.exp();
        }
        assert_eq!(tape.len(), 2);
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.1, -2.0, 1.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        let tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|&x| tape.var(x)).collect();
        let g = tape.gradient(log_sum_exp(&vs), &vs).unwrap();
        let z: f64 = xs.iter().map(|x| x.exp()).sum();
        for (gi, xi) in g.iter().zip(&xs) {
            assert!((gi - xi.exp() / z).abs() < 1e-14);
        }
    }
}
