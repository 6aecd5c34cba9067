//! Aggressive sphere tracing inside the bounding sphere.

use crate::geometry::{SdfField, SDF_TRUNCATION};
use crate::math::Vec3;

use super::camera::Ray;

/// Surface threshold on `|SDF|` in millimeters.
pub const HIT_THRESHOLD: f64 = 0.05;

/// Over-relaxation factor of the aggressive step.
pub const STEP_SCALE: f64 = 1.2;

pub const MAX_ITERATIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnhitReason {
    /// The ray never enters Ω.
    MissedBounds,
    /// The SDF is negative where the ray enters Ω.
    NegativeEntry,
    /// The ray left Ω without reaching the surface.
    ExitedBounds,
    /// The ray reached the open-back half-space rather than the shape.
    BackPlane,
    /// The iteration cap was reached; diagnostic.
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceResult {
    Hit { t: f64, sdf: f64, iterations: usize },
    Unhit { reason: UnhitReason, iterations: usize },
}

impl TraceResult {
    pub fn hit_t(&self) -> Option<f64> {
        match self {
            TraceResult::Hit { t, .. } => Some(*t),
            TraceResult::Unhit { .. } => None,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            TraceResult::Hit { iterations, .. } | TraceResult::Unhit { iterations, .. } => *iterations,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    /// Evaluating the entry point.
    Entry { t: f64 },
    /// Evaluating `t_try = t + 1.2·k·s`.
    Aggressive { t: f64, s: f64, t_try: f64 },
    /// Evaluating `t_try = t + k·s` after an aggressive overshoot.
    Safe { t: f64, t_try: f64 },
    /// Bisecting a bracketed crossing; `lo` is outside, `hi` inside.
    Bisect { lo: f64, hi: f64, t_try: f64 },
}

struct State {
    t_out: f64,
    phase: Phase,
    iterations: usize,
    result: Option<TraceResult>,
}

/// Traces every ray, evaluating the SDF for all active rays in one batch
/// per round.
///
/// Each accepted step advances `t` by `1.2·k·s` where `s` is the truncated
/// SDF and `k` the prior's conservative scale. A step that lands below
/// `−threshold` is discarded and retried with the plain step `k·s`; if that
/// also lands inside (a non-Lipschitz field), the bracket is bisected. `t`
/// never decreases.
pub fn sphere_trace_batch(field: &SdfField, params: &[f64], rays: &[Ray]) -> Vec<TraceResult> {
    let k = field.prior.shape.trace_scale();
    let mut states: Vec<State> = rays
        .iter()
        .map(|r| match field.bounds.intersect(&r.origin, &r.dir.vec()) {
            None => State {
                t_out: 0.0,
                phase: Phase::Entry { t: 0.0 },
                iterations: 0,
                result: Some(TraceResult::Unhit {
                    reason: UnhitReason::MissedBounds,
                    iterations: 0,
                }),
            },
            Some((t_in, t_out)) => State {
                t_out,
                phase: Phase::Entry { t: t_in },
                iterations: 0,
                result: None,
            },
        })
        .collect();

    loop {
        let active: Vec<usize> = (0..states.len()).filter(|&i| states[i].result.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let points: Vec<Vec3> = active
            .iter()
            .map(|&i| {
                let t = match states[i].phase {
                    Phase::Entry { t } => t,
                    Phase::Aggressive { t_try, .. } | Phase::Safe { t_try, .. } | Phase::Bisect { t_try, .. } => t_try,
                };
                rays[i].at(t)
            })
            .collect();
        let values = field.eval_batch(params, &points);
        for ((&i, x), v) in active.iter().zip(&points).zip(values) {
            let st = &mut states[i];
            st.iterations += 1;
            let s_new = v.clamp(-SDF_TRUNCATION, SDF_TRUNCATION);
            let back = field.prior.open_back.is_some() && field.prior.eval(x).2;
            let finish_hit = |t: f64, iterations: usize| {
                if back {
                    TraceResult::Unhit {
                        reason: UnhitReason::BackPlane,
                        iterations,
                    }
                } else {
                    TraceResult::Hit {
                        t,
                        sdf: s_new,
                        iterations,
                    }
                }
            };
            let next = match st.phase {
                Phase::Entry { t } => {
                    if s_new < 0.0 {
                        Step::Done(TraceResult::Unhit {
                            reason: UnhitReason::NegativeEntry,
                            iterations: st.iterations,
                        })
                    } else if s_new < HIT_THRESHOLD {
                        Step::Done(finish_hit(t, st.iterations))
                    } else {
                        Step::Accept(t, s_new)
                    }
                }
                Phase::Aggressive { t, s, t_try } => {
                    if s_new.abs() < HIT_THRESHOLD {
                        Step::Done(finish_hit(t_try, st.iterations))
                    } else if s_new < 0.0 {
                        let t_safe = t + k * s;
                        Step::Retry(Phase::Safe { t, t_try: t_safe })
                    } else {
                        Step::Accept(t_try, s_new)
                    }
                }
                Phase::Safe { t, t_try, .. } => {
                    if s_new.abs() < HIT_THRESHOLD {
                        Step::Done(finish_hit(t_try, st.iterations))
                    } else if s_new < 0.0 {
                        let mid = 0.5 * (t + t_try);
                        Step::Retry(Phase::Bisect { lo: t, hi: t_try, t_try: mid })
                    } else {
                        Step::Accept(t_try, s_new)
                    }
                }
                Phase::Bisect { lo, hi, t_try } => {
                    if s_new.abs() < HIT_THRESHOLD {
                        Step::Done(finish_hit(t_try, st.iterations))
                    } else {
                        let (lo, hi) = if s_new > 0.0 { (t_try, hi) } else { (lo, t_try) };
                        Step::Retry(Phase::Bisect {
                            lo,
                            hi,
                            t_try: 0.5 * (lo + hi),
                        })
                    }
                }
            };
            match next {
                Step::Done(r) => st.result = Some(r),
                Step::Accept(t, s) => {
                    let t_try = t + STEP_SCALE * k * s;
                    if t_try > st.t_out {
                        st.result = Some(TraceResult::Unhit {
                            reason: UnhitReason::ExitedBounds,
                            iterations: st.iterations,
                        });
                    } else {
                        st.phase = Phase::Aggressive { t, s, t_try };
                    }
                }
                Step::Retry(p) => st.phase = p,
            }
            if st.result.is_none() && st.iterations >= MAX_ITERATIONS {
                st.result = Some(TraceResult::Unhit {
                    reason: UnhitReason::IterationCap,
                    iterations: st.iterations,
                });
            }
        }
    }
    states.into_iter().map(|s| s.result.unwrap()).collect()
}

enum Step {
    Done(TraceResult),
    Accept(f64, f64),
    Retry(Phase),
}

/// Traces one ray.
pub fn sphere_trace(field: &SdfField, params: &[f64], ray: &Ray) -> TraceResult {
    sphere_trace_batch(field, params, std::slice::from_ref(ray))[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingSphere, Displacement, Prior, PriorShape};
    use crate::math::Direction;
    use approx::assert_relative_eq;

    fn sphere() -> SdfField {
        SdfField::new(
            PriorShape::new(Prior::Sphere {
                center: [0.0; 3],
                radius: 100.0,
            }),
            BoundingSphere {
                center: [0.0; 3],
                radius: 150.0,
            },
            Displacement::None,
        )
    }

    fn ray(o: [f64; 3], d: [f64; 3]) -> Ray {
        Ray {
            origin: Vec3::from(o),
            dir: Direction::normalize(Vec3::from(d)).unwrap(),
        }
    }

    #[test]
    fn head_on_hit() {
        let r = sphere_trace(&sphere(), &[], &ray([0.0, 0.0, 300.0], [0.0, 0.0, -1.0]));
        match r {
            TraceResult::Hit { t, sdf, .. } => {
                assert!((t - 200.0).abs() < HIT_THRESHOLD);
                assert!(sdf.abs() < HIT_THRESHOLD);
            }
            _ => panic!("expected a hit, got {r:?}"),
        }
    }

    #[test]
    fn miss_costs_no_iterations() {
        let r = sphere_trace(&sphere(), &[], &ray([0.0, 200.0, 300.0], [0.0, 0.0, -1.0]));
        assert_eq!(
            r,
            TraceResult::Unhit {
                reason: UnhitReason::MissedBounds,
                iterations: 0
            }
        );
    }

    #[test]
    fn grazing_hit_meets_threshold() {
        let r = sphere_trace(&sphere(), &[], &ray([0.0, 99.9, 300.0], [0.0, 0.0, -1.0]));
        let t = r.hit_t().expect("grazing ray should hit");
        let analytic = 300.0 - (100.0f64 * 100.0 - 99.9 * 99.9).sqrt();
        assert!(sphere().eval(&[], &Vec3::new(0.0, 99.9, 300.0 - t)).abs() < HIT_THRESHOLD);
        assert_relative_eq!(t, analytic, epsilon = 1.0);
        let exit = sphere_trace(&sphere(), &[], &ray([0.0, 100.5, 300.0], [0.0, 0.0, -1.0]));
        assert!(matches!(
            exit,
            TraceResult::Unhit {
                reason: UnhitReason::ExitedBounds,
                ..
            }
        ));
    }

    #[test]
    fn open_back_rays_are_unhit() {
        let mut f = sphere();
        f.prior.open_back = Some(0.0);
        // enters Ω behind the plane
        let r = sphere_trace(&f, &[], &ray([0.0, 120.0, -300.0], [0.0, 0.0, 1.0]));
        assert!(matches!(
            r,
            TraceResult::Unhit {
                reason: UnhitReason::NegativeEntry,
                ..
            }
        ));
        // passes beside the shape and reaches the plane
        let r = sphere_trace(&f, &[], &ray([0.0, 120.0, 300.0], [0.0, 0.0, -1.0]));
        assert!(matches!(
            r,
            TraceResult::Unhit {
                reason: UnhitReason::BackPlane,
                ..
            }
        ));
        assert!(sphere_trace(&f, &[], &ray([0.0, 0.0, 300.0], [0.0, 0.0, -1.0])).hit_t().is_some());
    }
}
