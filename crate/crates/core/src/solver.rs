//! Fixed-step method-of-steps integrator with cubic Hermite dense output
//! and threshold-triggered removal events.
//!
//! The step is chosen as `tau / s` for the smallest integer `s` that keeps
//! it at or below the requested step, so derivative discontinuities that
//! propagate at multiples of the delay always land on grid nodes and the
//! classic Runge-Kutta scheme keeps its order on each smoothness interval.
//! Delayed arguments are read back through the stored dense output; the
//! method of steps guarantees they lie in completed history.
//!
//! Removal events multiply one state component by `1 - fraction_removed`
//! the moment it crosses its threshold from below. The crossing time is
//! located by bisection on the dense output, the step is split there, and
//! all later delayed lookups see the post-jump values.

use crate::error::{Error, Result};
use crate::model::{rhs_raw, ModelParams, State};
use serde::{Deserialize, Serialize};

/// Negative undershoot this close to zero is attributed to roundoff and
/// clamped; anything larger aborts the run.
pub const NEG_TOL: f64 = 1e-9;

/// Default requested step for a single run: `tau / 64`, or 0.1 for an
/// undelayed system.
pub fn default_step(tau: f64) -> f64 {
    if tau > 0.0 {
        tau / 64.0
    } else {
        0.1
    }
}

/// Constant initial history on `[-tau, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySpec {
    pub value: State,
}

impl HistorySpec {
    /// Constant history; both components must be finite and non-negative.
    pub fn constant(x: f64, y: f64) -> Result<Self> {
        let value = State::new(x, y);
        if !value.is_finite() || x < 0.0 || y < 0.0 {
            return Err(Error::Domain {
                op: "HistorySpec::constant",
                reason: format!("history must be finite and non-negative, got ({x}, {y})"),
            });
        }
        Ok(Self { value })
    }
}

/// State component a removal rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventTarget {
    Prey,
    Predator,
}

impl EventTarget {
    fn component(&self, s: &State) -> f64 {
        match self {
            EventTarget::Prey => s.x,
            EventTarget::Predator => s.y,
        }
    }
}

impl std::fmt::Display for EventTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EventTarget::Prey => "prey",
            EventTarget::Predator => "predator",
        })
    }
}

/// Removal rule: when the target component crosses `threshold` from below,
/// it is multiplied by `1 - fraction_removed`. The rule re-arms once the
/// component is observed below the threshold again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRule {
    pub target: EventTarget,
    pub threshold: f64,
    pub fraction_removed: f64,
}

impl EventRule {
    pub fn new(target: EventTarget, threshold: f64, fraction_removed: f64) -> Result<Self> {
        if !threshold.is_finite() || threshold <= 0.0 {
            return Err(Error::Domain {
                op: "EventRule::new",
                reason: format!("threshold must be finite and > 0, got {threshold}"),
            });
        }
        if !fraction_removed.is_finite() || fraction_removed <= 0.0 || fraction_removed >= 1.0 {
            return Err(Error::Domain {
                op: "EventRule::new",
                reason: format!("fraction_removed must lie in (0, 1), got {fraction_removed}"),
            });
        }
        Ok(Self { target, threshold, fraction_removed })
    }
}

/// One fired removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub target: EventTarget,
    pub value_before: f64,
    pub value_after: f64,
}

/// Interior jump point: dense output is split here.
#[derive(Debug, Clone, Copy)]
struct EventKnot {
    time: f64,
    /// Index of the grid step `[t_i, t_{i+1}]` the knot lies in.
    step_index: usize,
    pre: State,
    pre_deriv: State,
    post: State,
    post_deriv: State,
}

/// Dense numerical solution on a uniform grid plus the event log.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Grid times `0, h, 2h, ...`, strictly increasing.
    pub times: Vec<f64>,
    /// State at each grid node (post-jump on event steps).
    pub states: Vec<State>,
    /// Right-hand side at each grid node, for Hermite dense output.
    pub derivatives: Vec<State>,
    /// Fired removals, in time order.
    pub events: Vec<EventRecord>,
    knots: Vec<EventKnot>,
    /// Effective step actually used (`tau / s`).
    pub step: f64,
    pub tau: f64,
    pub history: HistorySpec,
    /// Smallest raw component value seen at any accepted node before clamping.
    pub min_pre_clamp: f64,
    /// Number of nodes where a tiny negative undershoot was clamped to zero.
    pub clamped_nodes: usize,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn terminal(&self) -> State {
        *self.states.last().expect("trajectory has at least one node")
    }

    /// Cubic Hermite evaluation at any time in `[-tau, t_end]`.
    ///
    /// Times in `[-tau, 0]` return the history value; grid nodes return the
    /// stored state exactly; segments containing an event are split at the
    /// event time, with the post-jump branch used from the event onward.
    pub fn dense_eval(&self, t: f64) -> Result<State> {
        let t_end = self.t_end();
        if !t.is_finite() || t < -self.tau - 1e-12 * self.tau.max(1.0) || t > t_end * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { t, min: -self.tau, max: t_end });
        }
        if t <= 0.0 {
            return Ok(self.history.value);
        }
        Ok(eval_dense(
            &self.times,
            &self.states,
            &self.derivatives,
            &self.knots,
            self.history.value,
            self.step,
            t,
        ))
    }

    /// Writes the trajectory as CSV with header `t,x,y`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{},{},{}", t, s.x, s.y)?;
        }
        Ok(())
    }

    /// Writes the event log as CSV with header `t,target,before,after`.
    pub fn write_events_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,target,before,after")?;
        for e in &self.events {
            writeln!(w, "{},{},{},{}", e.time, e.target, e.value_before, e.value_after)?;
        }
        Ok(())
    }
}

/// Integrates the predator-prey model.
pub fn integrate(
    params: &ModelParams,
    history: HistorySpec,
    t_end: f64,
    step: f64,
    rules: &[EventRule],
) -> Result<Trajectory> {
    params.validate()?;
    let p = *params;
    integrate_rhs(
        move |current, delayed| rhs_raw(current, delayed, &p),
        params.tau,
        history,
        t_end,
        step,
        rules,
    )
}

/// Integrates an arbitrary two-component delay system `u'(t) = f(u(t), u(t - tau))`.
///
/// This is the same engine `integrate` runs on; exposing the right-hand
/// side lets test problems with known solutions exercise the stepper.
/// States are kept on the non-negative cone exactly as for the model.
pub fn integrate_rhs<F>(
    rhs: F,
    tau: f64,
    history: HistorySpec,
    t_end: f64,
    step: f64,
    rules: &[EventRule],
) -> Result<Trajectory>
where
    F: Fn(State, State) -> State,
{
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::Domain {
            op: "integrate",
            reason: format!("t_end must be finite and > 0, got {t_end}"),
        });
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Domain {
            op: "integrate",
            reason: format!("step must be finite and > 0, got {step}"),
        });
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Domain {
            op: "integrate",
            reason: format!("tau must be finite and >= 0, got {tau}"),
        });
    }

    // h = tau / s with the smallest s giving h <= requested step.
    let (h, _delay_steps) = if tau > 0.0 {
        let s = (tau / step).ceil().max(1.0);
        (tau / s, s as usize)
    } else {
        (step, 0)
    };
    let n_steps = ((t_end / h - 1e-9).ceil().max(1.0)) as usize;

    let mut ig = Integrator {
        rhs,
        h,
        tau,
        history,
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        derivs: Vec::with_capacity(n_steps + 1),
        knots: Vec::new(),
        events: Vec::new(),
        rules,
        armed: rules
            .iter()
            .map(|r| r.target.component(&history.value) < r.threshold)
            .collect(),
        min_pre_clamp: history.value.min_component(),
        clamped: 0,
    };
    ig.times.push(0.0);
    ig.states.push(history.value);
    let d0 = ig.eval_rhs_at(0.0, history.value);
    ig.derivs.push(d0);

    for _ in 0..n_steps {
        ig.advance()?;
    }

    Ok(Trajectory {
        times: ig.times,
        states: ig.states,
        derivatives: ig.derivs,
        events: ig.events,
        knots: ig.knots,
        step: h,
        tau,
        history,
        min_pre_clamp: ig.min_pre_clamp,
        clamped_nodes: ig.clamped,
    })
}

struct Integrator<'a, F> {
    rhs: F,
    h: f64,
    tau: f64,
    history: HistorySpec,
    times: Vec<f64>,
    states: Vec<State>,
    derivs: Vec<State>,
    knots: Vec<EventKnot>,
    events: Vec<EventRecord>,
    rules: &'a [EventRule],
    armed: Vec<bool>,
    min_pre_clamp: f64,
    clamped: usize,
}

impl<'a, F> Integrator<'a, F>
where
    F: Fn(State, State) -> State,
{
    /// Delayed state at time `t - tau`, read from history or dense output.
    fn delayed(&self, t: f64) -> State {
        let td = t - self.tau;
        if td <= 0.0 {
            return self.history.value;
        }
        eval_dense(
            &self.times,
            &self.states,
            &self.derivs,
            &self.knots,
            self.history.value,
            self.h,
            td,
        )
    }

    /// RHS with the delayed argument resolved; stage inputs are projected
    /// onto the non-negative cone (the model is only defined there).
    fn eval_rhs_at(&self, t: f64, u: State) -> State {
        let u = u.clamped_non_negative();
        if self.tau > 0.0 {
            (self.rhs)(u, self.delayed(t).clamped_non_negative())
        } else {
            (self.rhs)(u, u)
        }
    }

    fn rk4(&self, t: f64, u: State, dt: f64) -> State {
        let k1 = self.eval_rhs_at(t, u);
        let k2 = self.eval_rhs_at(
            t + dt / 2.0,
            State::new(u.x + dt / 2.0 * k1.x, u.y + dt / 2.0 * k1.y),
        );
        let k3 = self.eval_rhs_at(
            t + dt / 2.0,
            State::new(u.x + dt / 2.0 * k2.x, u.y + dt / 2.0 * k2.y),
        );
        let k4 = self.eval_rhs_at(t + dt, State::new(u.x + dt * k3.x, u.y + dt * k3.y));
        State::new(
            u.x + dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
            u.y + dt / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        )
    }

    fn advance(&mut self) -> Result<()> {
        let n = self.states.len() - 1;
        let t1 = (n + 1) as f64 * self.h;
        let mut seg_t = n as f64 * self.h;
        let mut seg_state = self.states[n];
        let mut seg_deriv = self.derivs[n];
        let mut fired = 0usize;

        loop {
            let dt = t1 - seg_t;
            let end_raw = self.rk4(seg_t, seg_state, dt);
            if !end_raw.is_finite() {
                return Err(Error::IntegrationAborted {
                    t: seg_t,
                    reason: "non-finite state encountered".to_string(),
                });
            }

            let crossing = if self.rules.is_empty() {
                None
            } else {
                let end_deriv = self.eval_rhs_at(t1, end_raw);
                self.earliest_crossing(seg_t, seg_state, seg_deriv, t1, end_raw, end_deriv)
            };

            match crossing {
                None => {
                    self.commit_node(t1, end_raw)?;
                    return Ok(());
                }
                Some((rule_idx, t_event, pre_state)) => {
                    fired += 1;
                    if fired > 64 {
                        return Err(Error::IntegrationAborted {
                            t: seg_t,
                            reason: "more than 64 events inside one step".to_string(),
                        });
                    }
                    let rule = self.rules[rule_idx];
                    let pre = pre_state.clamped_non_negative();
                    let before = rule.target.component(&pre);
                    let after = before * (1.0 - rule.fraction_removed);
                    let mut post = pre;
                    match rule.target {
                        EventTarget::Prey => post.x = after,
                        EventTarget::Predator => post.y = after,
                    }
                    let pre_deriv = self.eval_rhs_at(t_event, pre);
                    let post_deriv = self.eval_rhs_at(t_event, post);
                    self.knots.push(EventKnot {
                        time: t_event,
                        step_index: n,
                        pre,
                        pre_deriv,
                        post,
                        post_deriv,
                    });
                    self.events.push(EventRecord {
                        time: t_event,
                        target: rule.target,
                        value_before: before,
                        value_after: after,
                    });
                    self.armed[rule_idx] = after < rule.threshold;
                    self.rearm(&post);

                    if t1 - t_event <= 1e-12 * self.h {
                        // Event landed on the node; the node takes the
                        // post-jump value directly.
                        self.commit_node(t1, post)?;
                        return Ok(());
                    }
                    seg_t = t_event;
                    seg_state = post;
                    seg_deriv = post_deriv;
                }
            }
        }
    }

    fn commit_node(&mut self, t: f64, raw: State) -> Result<()> {
        let m = raw.min_component();
        self.min_pre_clamp = self.min_pre_clamp.min(m);
        if m < -NEG_TOL {
            return Err(Error::IntegrationAborted {
                t: t - self.h,
                reason: format!("state component {m:.3e} below -{NEG_TOL:.0e} tolerance"),
            });
        }
        let state = if m < 0.0 {
            self.clamped += 1;
            raw.clamped_non_negative()
        } else {
            raw
        };
        self.times.push(t);
        self.states.push(state);
        let d = self.eval_rhs_at(t, state);
        self.derivs.push(d);
        self.rearm(&state);
        Ok(())
    }

    fn rearm(&mut self, observed: &State) {
        for (armed, rule) in self.armed.iter_mut().zip(self.rules) {
            if !*armed && rule.target.component(observed) < rule.threshold {
                *armed = true;
            }
        }
    }

    /// Earliest upward threshold crossing on the trial Hermite segment.
    fn earliest_crossing(
        &self,
        t0: f64,
        u0: State,
        d0: State,
        t1: f64,
        u1: State,
        d1: State,
    ) -> Option<(usize, f64, State)> {
        let tol = if self.tau > 0.0 { 1e-10 * self.tau } else { 1e-10 };
        let mut best: Option<(usize, f64)> = None;
        for (idx, rule) in self.rules.iter().enumerate() {
            if !self.armed[idx] {
                continue;
            }
            let v0 = rule.target.component(&u0);
            let v1 = rule.target.component(&u1);
            if v0 < rule.threshold && v1 >= rule.threshold {
                let te = bisect_crossing(t0, t1, tol, |t| {
                    rule.target
                        .component(&hermite(t0, &u0, &d0, t1, &u1, &d1, t))
                        - rule.threshold
                });
                if best.map_or(true, |(_, tb)| te < tb) {
                    best = Some((idx, te));
                }
            }
        }
        best.map(|(idx, te)| (idx, te, hermite(t0, &u0, &d0, t1, &u1, &d1, te)))
    }
}

/// Bisection for the first sign change of `g` on `[lo, hi]` with
/// `g(lo) < 0 <= g(hi)`.
fn bisect_crossing<G: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, tol: f64, g: G) -> f64 {
    for _ in 0..128 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Cubic Hermite interpolation between `(t0, u0, d0)` and `(t1, u1, d1)`.
fn hermite(t0: f64, u0: &State, d0: &State, t1: f64, u1: &State, d1: &State, t: f64) -> State {
    let dt = t1 - t0;
    let s = (t - t0) / dt;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    State::new(
        h00 * u0.x + h10 * dt * d0.x + h01 * u1.x + h11 * dt * d1.x,
        h00 * u0.y + h10 * dt * d0.y + h01 * u1.y + h11 * dt * d1.y,
    )
}

/// Knot-aware dense evaluation at `t > 0` over committed nodes.
#[allow(clippy::too_many_arguments)]
fn eval_dense(
    times: &[f64],
    states: &[State],
    derivs: &[State],
    knots: &[EventKnot],
    _history: State,
    h: f64,
    t: f64,
) -> State {
    let last = times.len() - 1;
    let fi = t / h;
    let mut i = fi.floor() as usize;
    if i >= last {
        i = last - 1;
    }
    // Snap exact node hits.
    if (t - times[i]).abs() <= 1e-12 * h {
        return states[i];
    }
    if (t - times[i + 1]).abs() <= 1e-12 * h {
        return states[i + 1];
    }
    if t > times[i + 1] {
        i += 1; // floor landed one short from roundoff
    }

    // Sub-segment endpoints, split at event knots inside step i.
    let mut left_t = times[i];
    let mut left_u = states[i];
    let mut left_d = derivs[i];
    let mut right_t = times[i + 1];
    let mut right_u = states[i + 1];
    let mut right_d = derivs[i + 1];
    for k in knots.iter().filter(|k| k.step_index == i) {
        if t < k.time {
            if k.time < right_t {
                right_t = k.time;
                right_u = k.pre;
                right_d = k.pre_deriv;
            }
        } else if k.time >= left_t {
            left_t = k.time;
            left_u = k.post;
            left_d = k.post_deriv;
        }
    }
    if (t - left_t).abs() == 0.0 {
        return left_u;
    }
    hermite(left_t, &left_u, &left_d, right_t, &right_u, &right_d, t).clamped_non_negative()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn gentle() -> ModelParams {
        ModelParams::new(0.1, 200.0, 0.5, 0.5, 0.1, 2.0, 27.0).unwrap()
    }

    #[test]
    fn equilibrium_history_stays_constant() {
        let p = gentle();
        let hist = HistorySpec::constant(p.k, 0.0).unwrap();
        let traj = integrate(&p, hist, 100.0, p.tau / 64.0, &[]).unwrap();
        for s in &traj.states {
            assert!((s.x - p.k).abs() < 1e-9);
            assert_eq!(s.y, 0.0);
        }
        assert!(traj.events.is_empty());
    }

    #[test]
    fn step_is_adjusted_to_divide_tau() {
        let p = gentle();
        let hist = HistorySpec::constant(100.0, 1.0).unwrap();
        let traj = integrate(&p, hist, 10.0, 0.4, &[]).unwrap();
        // smallest s with tau/s <= 0.4 is 68 (27/67 > 0.4 > 27/68)
        let s = (p.tau / traj.step).round();
        assert!((p.tau / s - traj.step).abs() < 1e-15);
        assert!(traj.step <= 0.4);
        assert!(p.tau / (s - 1.0) > 0.4);
    }

    #[test]
    fn scalar_delay_test_problem_matches_method_of_steps() {
        // u'(t) = -u(t-1), constant history 1. On [0,1] the solution is
        // 1 - t, so u(1) = 0.
        let hist = HistorySpec::constant(1.0, 0.0).unwrap();
        let traj = integrate_rhs(
            |_cur, delayed| State::new(-delayed.x, 0.0),
            1.0,
            hist,
            1.0,
            0.05,
            &[],
        )
        .unwrap();
        let u1 = traj.dense_eval(1.0).unwrap();
        assert!(u1.x.abs() < 1e-8, "u(1) = {}", u1.x);
    }

    #[test]
    fn dense_eval_is_exact_at_nodes_and_history() {
        let p = gentle();
        let hist = HistorySpec::constant(100.0, 1.0).unwrap();
        let traj = integrate(&p, hist, 60.0, p.tau / 32.0, &[]).unwrap();
        for (i, &t) in traj.times.iter().enumerate().step_by(7) {
            let s = traj.dense_eval(t).unwrap();
            assert_eq!(s, traj.states[i]);
        }
        let h = traj.dense_eval(-p.tau / 2.0).unwrap();
        assert_eq!(h, hist.value);
        assert!(traj.dense_eval(-p.tau - 1.0).is_err());
        assert!(traj.dense_eval(traj.t_end() + 1.0).is_err());
    }

    #[test]
    fn event_fires_and_scales_component() {
        let p = gentle();
        let hist = HistorySpec::constant(100.0, 1.0).unwrap();
        let rule = EventRule::new(EventTarget::Prey, 150.0, 0.5).unwrap();
        let traj = integrate(&p, hist, 400.0, p.tau / 64.0, &[rule]).unwrap();
        assert!(!traj.events.is_empty());
        for e in &traj.events {
            assert_eq!(e.target, EventTarget::Prey);
            assert!((e.value_before - 150.0).abs() < 1e-6);
            assert!((e.value_after - 0.5 * e.value_before).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_threshold_is_bit_for_bit_idempotent() {
        let p = gentle();
        let hist = HistorySpec::constant(100.0, 1.0).unwrap();
        let rule = EventRule::new(EventTarget::Prey, 1e6, 0.5).unwrap();
        let plain = integrate(&p, hist, 300.0, p.tau / 64.0, &[]).unwrap();
        let ruled = integrate(&p, hist, 300.0, p.tau / 64.0, &[rule]).unwrap();
        assert!(ruled.events.is_empty());
        assert_eq!(plain.times, ruled.times);
        assert_eq!(plain.states, ruled.states);
        assert_eq!(plain.derivatives, ruled.derivatives);
    }

    #[test]
    fn rule_validation() {
        assert!(EventRule::new(EventTarget::Prey, 0.0, 0.5).is_err());
        assert!(EventRule::new(EventTarget::Prey, 1.0, 0.0).is_err());
        assert!(EventRule::new(EventTarget::Prey, 1.0, 1.0).is_err());
        assert!(HistorySpec::constant(-1.0, 0.0).is_err());
    }

    #[test]
    fn csv_round_trips_through_parse() {
        let p = gentle();
        let hist = HistorySpec::constant(100.0, 1.0).unwrap();
        let traj = integrate(&p, hist, 30.0, p.tau / 16.0, &[]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,y"));
        for (line, (t, s)) in lines.zip(traj.times.iter().zip(&traj.states)) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols, vec![*t, s.x, s.y]);
        }
    }
}
