use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Central-difference comparison of analytic gradients. Runs in f64 only: the
/// f32 path shares every kernel through the `Real` trait, so checking the
/// 64-bit instantiation validates both without drowning in rounding noise.
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorstSite {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub elements: usize,
    pub max_rel: f64,
    pub tol: f64,
    pub worst: Option<WorstSite>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel <= self.tol
    }
}

impl GradCheck {
    /// `build` constructs a scalar loss from the registered parameters, in
    /// registration order. It runs once per perturbed element, so keep the
    /// parameter counts small.
    pub fn run<F>(&self, params: &[(&str, Tensor<f64>)], build: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
    {
        let loss_at = |values: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let mut handles = Vec::with_capacity(values.len());
            for ((name, _), v) in params.iter().zip(values.iter()) {
                handles.push(tape.param(name, v.clone())?);
            }
            let loss = build(&mut tape, &handles)?;
            loss.item()
        };

        let base: Vec<Tensor<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
        let analytic = {
            let mut tape = Tape::new();
            let mut handles = Vec::with_capacity(base.len());
            for ((name, _), v) in params.iter().zip(base.iter()) {
                handles.push(tape.param(name, v.clone())?);
            }
            let loss = build(&mut tape, &handles)?;
            tape.backward(&loss)?
        };

        let mut report = GradCheckReport {
            elements: 0,
            max_rel: 0.0,
            tol: self.tol,
            worst: None,
        };
        for (pi, (name, value)) in params.iter().enumerate() {
            let grad = analytic.get(name);
            for i in 0..value.numel() {
                let a = grad.map_or(0.0, |g| g.data()[i]);
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[pi] = nudge(value, i, self.step);
                minus[pi] = nudge(value, i, -self.step);
                let n = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * self.step);
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(self.floor);
                report.elements += 1;
                if rel > report.max_rel {
                    report.max_rel = rel;
                    report.worst = Some(WorstSite {
                        param: name.to_string(),
                        index: i,
                        analytic: a,
                        numeric: n,
                    });
                }
            }
        }
        Ok(report)
    }
}

fn nudge(t: &Tensor<f64>, index: usize, delta: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[index] += delta;
    Tensor::from_vec(t.shape(), data).expect("same shape")
}
