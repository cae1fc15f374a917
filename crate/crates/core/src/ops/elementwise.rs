use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{GradSink, NodeId, Tape, TapeCtx, TapeOp};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// How operand shapes line up. `RhsSuffix` broadcasts the right operand over
/// the leading axes of the left one (bias rows, per-channel scales).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Equal,
    RhsSuffix,
    RhsScalar,
    LhsScalar,
}

fn resolve_broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Broadcast> {
    if lhs == rhs {
        return Ok(Broadcast::Equal);
    }
    if rhs.is_empty() {
        return Ok(Broadcast::RhsScalar);
    }
    if lhs.is_empty() {
        return Ok(Broadcast::LhsScalar);
    }
    if rhs.len() < lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        return Ok(Broadcast::RhsSuffix);
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

fn apply<P: Real>(kind: BinaryKind, a: P, b: P) -> P {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
    }
}

struct BinaryOp {
    kind: BinaryKind,
    mode: Broadcast,
    lhs: NodeId,
    rhs: NodeId,
}

impl BinaryOp {
    fn op_name(kind: BinaryKind) -> &'static str {
        match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }
}

impl<P: Real> TapeOp<P> for BinaryOp {
    fn name(&self) -> &'static str {
        Self::op_name(self.kind)
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.lhs, self.rhs]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let g = grad_out.data();
        let a = ctx.value(self.lhs);
        let b = ctx.value(self.rhs);

        // Gradient flowing to the left operand.
        {
            let ga = sink.acc(self.lhs, a.numel());
            match (self.kind, self.mode) {
                (BinaryKind::Add | BinaryKind::Sub, Broadcast::LhsScalar) => {
                    for &gi in g {
                        ga[0] = ga[0] + gi;
                    }
                }
                (BinaryKind::Add | BinaryKind::Sub, _) => {
                    for (o, &gi) in ga.iter_mut().zip(g.iter()) {
                        *o = *o + gi;
                    }
                }
                (BinaryKind::Mul, Broadcast::LhsScalar) => {
                    for (&gi, &bi) in g.iter().zip(b.data().iter()) {
                        ga[0] = ga[0] + gi * bi;
                    }
                }
                (BinaryKind::Mul, Broadcast::Equal) => {
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g.iter()).zip(b.data().iter()) {
                        *o = *o + gi * bi;
                    }
                }
                (BinaryKind::Mul, Broadcast::RhsScalar) => {
                    let bv = b.data()[0];
                    for (o, &gi) in ga.iter_mut().zip(g.iter()) {
                        *o = *o + gi * bv;
                    }
                }
                (BinaryKind::Mul, Broadcast::RhsSuffix) => {
                    let rn = b.numel();
                    for (i, (o, &gi)) in ga.iter_mut().zip(g.iter()).enumerate() {
                        *o = *o + gi * b.data()[i % rn];
                    }
                }
            }
        }

        // Gradient flowing to the right operand, reduced over broadcast axes.
        {
            let gb = sink.acc(self.rhs, b.numel());
            let sign = |v: P| if self.kind == BinaryKind::Sub { P::ZERO - v } else { v };
            match (self.kind, self.mode) {
                (BinaryKind::Add | BinaryKind::Sub, Broadcast::Equal | Broadcast::LhsScalar) => {
                    for (o, &gi) in gb.iter_mut().zip(g.iter()) {
                        *o = *o + sign(gi);
                    }
                }
                (BinaryKind::Add | BinaryKind::Sub, Broadcast::RhsScalar) => {
                    for &gi in g {
                        gb[0] = gb[0] + sign(gi);
                    }
                }
                (BinaryKind::Add | BinaryKind::Sub, Broadcast::RhsSuffix) => {
                    let rn = gb.len();
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % rn] = gb[i % rn] + sign(gi);
                    }
                }
                (BinaryKind::Mul, Broadcast::Equal) => {
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g.iter()).zip(a.data().iter()) {
                        *o = *o + gi * ai;
                    }
                }
                (BinaryKind::Mul, Broadcast::LhsScalar) => {
                    let av = a.data()[0];
                    for (o, &gi) in gb.iter_mut().zip(g.iter()) {
                        *o = *o + gi * av;
                    }
                }
                (BinaryKind::Mul, Broadcast::RhsScalar) => {
                    for (&gi, &ai) in g.iter().zip(a.data().iter()) {
                        gb[0] = gb[0] + gi * ai;
                    }
                }
                (BinaryKind::Mul, Broadcast::RhsSuffix) => {
                    let rn = gb.len();
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % rn] = gb[i % rn] + gi * a.data()[i];
                    }
                }
            }
        }
    }
}

const GELU_C0: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

/// Tanh-approximated GELU and its derivative at `x`.
pub fn gelu_scalar<P: Real>(x: P) -> (P, P) {
    let c0 = P::from_f64(GELU_C0);
    let c1 = P::from_f64(GELU_C1);
    let half = P::from_f64(0.5);
    let x2 = x * x;
    let u = c0 * (x + c1 * x * x2);
    let t = u.tanh();
    let y = half * x * (P::ONE + t);
    let du = c0 * (P::ONE + P::from_f64(3.0) * c1 * x2);
    let dy = half * (P::ONE + t) + half * x * (P::ONE - t * t) * du;
    (y, dy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Gelu,
    Exp,
    Sqrt,
    Recip,
}

struct UnaryOp {
    kind: UnaryKind,
    input: NodeId,
}

impl<P: Real> TapeOp<P> for UnaryOp {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Gelu => "gelu",
            UnaryKind::Exp => "exp",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Recip => "recip",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let g = grad_out.data();
        let gx = sink.acc(self.input, g.len());
        match self.kind {
            UnaryKind::Gelu => {
                let x = ctx.value(self.input);
                for (i, (o, &gi)) in gx.iter_mut().zip(g.iter()).enumerate() {
                    let (_, d) = gelu_scalar(x.data()[i]);
                    *o = *o + gi * d;
                }
            }
            UnaryKind::Exp => {
                for ((o, &gi), &yi) in gx.iter_mut().zip(g.iter()).zip(out.data().iter()) {
                    *o = *o + gi * yi;
                }
            }
            UnaryKind::Sqrt => {
                let half = P::from_f64(0.5);
                for ((o, &gi), &yi) in gx.iter_mut().zip(g.iter()).zip(out.data().iter()) {
                    *o = *o + gi * half / yi;
                }
            }
            UnaryKind::Recip => {
                for ((o, &gi), &yi) in gx.iter_mut().zip(g.iter()).zip(out.data().iter()) {
                    *o = *o - gi * yi * yi;
                }
            }
        }
    }
}

struct ScaleOp {
    factor: f64,
    input: NodeId,
}

impl<P: Real> TapeOp<P> for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, _ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let f = P::from_f64(self.factor);
        let g = grad_out.data();
        let gx = sink.acc(self.input, g.len());
        for (o, &gi) in gx.iter_mut().zip(g.iter()) {
            *o = *o + gi * f;
        }
    }
}

impl<P: Real> Tape<P> {
    fn binary(&mut self, kind: BinaryKind, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        let mode = resolve_broadcast(BinaryOp::op_name(kind), a.shape(), b.shape())?;
        let out_shape: Vec<usize> = if mode == Broadcast::LhsScalar {
            b.shape().to_vec()
        } else {
            a.shape().to_vec()
        };
        let n: usize = out_shape.iter().product();
        let mut out = vec![P::ZERO; n];
        match mode {
            Broadcast::Equal => {
                for ((o, &x), &y) in out.iter_mut().zip(a.data().iter()).zip(b.data().iter()) {
                    *o = apply(kind, x, y);
                }
            }
            Broadcast::RhsScalar => {
                let y = b.data()[0];
                for (o, &x) in out.iter_mut().zip(a.data().iter()) {
                    *o = apply(kind, x, y);
                }
            }
            Broadcast::LhsScalar => {
                let x = a.data()[0];
                for (o, &y) in out.iter_mut().zip(b.data().iter()) {
                    *o = apply(kind, x, y);
                }
            }
            Broadcast::RhsSuffix => {
                let rn = b.numel();
                for (i, (o, &x)) in out.iter_mut().zip(a.data().iter()).enumerate() {
                    *o = apply(kind, x, b.data()[i % rn]);
                }
            }
        }
        let lhs = self.ensure(a);
        let rhs = self.ensure(b);
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.record(Box::new(BinaryOp { kind, mode, lhs, rhs }), value))
    }

    pub fn add(&mut self, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: &Tensor<P>) -> Result<Tensor<P>> {
        let mut out = vec![P::ZERO; x.numel()];
        for (o, &v) in out.iter_mut().zip(x.data().iter()) {
            *o = match kind {
                UnaryKind::Gelu => gelu_scalar(v).0,
                UnaryKind::Exp => v.exp(),
                UnaryKind::Sqrt => {
                    if v < P::ZERO {
                        return Err(TensorError::domain("sqrt", format!("negative input {v}")));
                    }
                    v.sqrt()
                }
                UnaryKind::Recip => {
                    if v == P::ZERO {
                        return Err(TensorError::domain("recip", "zero input"));
                    }
                    P::ONE / v
                }
            };
        }
        let input = self.ensure(x);
        let value = Tensor::from_vec(x.shape(), out)?;
        Ok(self.record(Box::new(UnaryOp { kind, input }), value))
    }

    pub fn gelu(&mut self, x: &Tensor<P>) -> Result<Tensor<P>> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn exp(&mut self, x: &Tensor<P>) -> Result<Tensor<P>> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn sqrt(&mut self, x: &Tensor<P>) -> Result<Tensor<P>> {
        self.unary(UnaryKind::Sqrt, x)
    }

    pub fn recip(&mut self, x: &Tensor<P>) -> Result<Tensor<P>> {
        self.unary(UnaryKind::Recip, x)
    }

    /// Multiply by a compile-time constant; the constant takes no tape node.
    pub fn scale(&mut self, x: &Tensor<P>, factor: f64) -> Tensor<P> {
        let f = P::from_f64(factor);
        let out: Vec<P> = x.data().iter().map(|&v| v * f).collect();
        let input = self.ensure(x);
        let value = Tensor::from_vec(x.shape(), out).expect("same shape");
        self.record(Box::new(ScaleOp { factor, input }), value)
    }

    pub fn neg(&mut self, x: &Tensor<P>) -> Tensor<P> {
        self.scale(x, -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn add_equal_shapes() {
        let mut tape = Tape::new();
        let y = tape.add(&t(&[2], vec![1.0, 2.0]), &t(&[2], vec![10.0, 20.0])).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0]);
    }

    #[test]
    fn add_suffix_broadcast_is_row_bias() {
        let mut tape = Tape::new();
        let x = t(&[2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let bias = t(&[3], vec![1.0, 2.0, 3.0]);
        let y = tape.add(&x, &bias).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let mut tape = Tape::new();
        let x = t(&[3], vec![1.0, 2.0, 3.0]);
        let s = Tensor::scalar(10.0);
        assert_eq!(tape.mul(&x, &s).unwrap().data(), &[10.0, 20.0, 30.0]);
        assert_eq!(tape.sub(&s, &x).unwrap().data(), &[9.0, 8.0, 7.0]);
    }

    #[test]
    fn prefix_broadcast_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::zeros(&[2, 3]);
        let p = Tensor::zeros(&[2]);
        assert!(tape.add(&x, &p).is_err());
    }

    #[test]
    fn sqrt_negative_is_domain_error() {
        let mut tape = Tape::new();
        let x = t(&[1], vec![-1.0]);
        let err = tape.sqrt(&x).unwrap_err();
        assert!(err.to_string().contains("sqrt"));
    }

    #[test]
    fn recip_zero_is_domain_error() {
        let mut tape = Tape::new();
        let x = t(&[1], vec![0.0]);
        assert!(tape.recip(&x).is_err());
    }

    #[test]
    fn gelu_matches_reference_points() {
        // gelu(0) = 0 and gelu is odd-ish around large |x|: gelu(5) ~ 5.
        let (y0, d0) = gelu_scalar(0.0f64);
        assert_eq!(y0, 0.0);
        assert!((d0 - 0.5).abs() < 1e-15);
        let (y5, _) = gelu_scalar(5.0f64);
        assert!((y5 - 5.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-2.0f64, -0.7, -0.1, 0.0, 0.3, 1.5, 2.5] {
            let h = 1e-6;
            let (_, d) = gelu_scalar(x);
            let fd = (gelu_scalar(x + h).0 - gelu_scalar(x - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8, "x={x} d={d} fd={fd}");
        }
    }

    #[test]
    fn scale_and_neg() {
        let mut tape = Tape::new();
        let x = t(&[2], vec![3.0, -4.0]);
        assert_eq!(tape.scale(&x, 2.0).data(), &[6.0, -8.0]);
        assert_eq!(tape.neg(&x).data(), &[-3.0, 4.0]);
    }
}
