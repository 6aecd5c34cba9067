//! Central finite-difference checks of recorded gradients.

use ndarray::Array2;

use crate::tape::{Graph, ParamTape, Var};

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Entries where both gradients are at most this large are not compared.
pub const FD_MIN_MAGNITUDE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }

    pub fn compared(&self) -> bool {
        self.analytic.abs().max(self.numeric.abs()) > FD_MIN_MAGNITUDE
    }

    pub fn passes(&self) -> bool {
        !self.compared() || self.rel_error() <= FD_REL_TOL
    }
}

/// Compares reverse-mode parameter gradients of the scalar built by `f`
/// against central differences at the given flat indices.
pub fn check_param_gradients(tape: &ParamTape, indices: &[usize], h: f64, f: impl Fn(&mut Graph) -> Var) -> Vec<GradCheckEntry> {
    let analytic = {
        let mut g = Graph::new(tape);
        let out = f(&mut g);
        g.backward(out).params
    };
    let eval = |t: &ParamTape| {
        let mut g = Graph::new(t);
        let out = f(&mut g);
        g.scalar(out)
    };
    let mut probe = tape.clone();
    indices
        .iter()
        .map(|&i| {
            let x0 = tape.values()[i];
            probe.values_mut()[i] = x0 + h;
            let fp = eval(&probe);
            probe.values_mut()[i] = x0 - h;
            let fm = eval(&probe);
            probe.values_mut()[i] = x0;
            GradCheckEntry {
                name: tape.entry_at(i).map(|e| e.name.clone()).unwrap_or_default(),
                index: i,
                analytic: analytic[i],
                numeric: (fp - fm) / (2.0 * h),
            }
        })
        .collect()
}

/// Same check with respect to every entry of an input array.
pub fn check_input_gradients(name: &str, input: &Array2<f64>, h: f64, f: impl Fn(&mut Graph, Var) -> Var) -> Vec<GradCheckEntry> {
    let tape = ParamTape::new();
    let analytic = {
        let mut g = Graph::new(&tape);
        let x = g.input(input.clone());
        let out = f(&mut g, x);
        let grads = g.backward(out);
        grads.wrt(x).cloned().unwrap_or_else(|| Array2::zeros(input.dim()))
    };
    let eval = |a: Array2<f64>| {
        let mut g = Graph::new(&tape);
        let x = g.input(a);
        let out = f(&mut g, x);
        g.scalar(out)
    };
    let mut out = Vec::with_capacity(input.len());
    for (k, ((i, j), &x0)) in input.indexed_iter().enumerate() {
        let mut p = input.clone();
        p[[i, j]] = x0 + h;
        let fp = eval(p.clone());
        p[[i, j]] = x0 - h;
        let fm = eval(p);
        out.push(GradCheckEntry {
            name: name.to_string(),
            index: k,
            analytic: analytic[[i, j]],
            numeric: (fp - fm) / (2.0 * h),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_has_gradient_two_p() {
        let mut tape = ParamTape::new();
        let h = tape.register("p", "g", 1, 4, vec![0.5, -1.0, 2.0, 3.0]);
        let mut g = Graph::new(&tape);
        let p = g.param(h);
        let sq = g.square(p);
        let s = g.sum(sq);
        let grads = g.backward(s).params;
        assert_eq!(grads, vec![1.0, -2.0, 4.0, 6.0]);
        let checks = check_param_gradients(&tape, &[0, 1, 2, 3], FD_STEP, |g| {
            let p = g.param(h);
            let sq = g.square(p);
            g.sum(sq)
        });
        assert!(checks.iter().all(|c| c.passes()));
    }

    #[test]
    fn inactive_clamp_passes_gradient() {
        let checks = check_input_gradients("relu", &array![[0.7, 1.3]], FD_STEP, |g, x| {
            let r = g.relu(x);
            let s = g.square(r);
            g.sum(s)
        });
        assert!((checks[0].analytic - 1.4).abs() < 1e-15);
        assert!(checks.iter().all(|c| c.passes()));
    }
}
