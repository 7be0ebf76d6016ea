use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::invert4;
use crate::grid::{M4, V4};

use super::{ClassicalMass, DynamicsError, ExternalFields, MassModel, ParticleParams};

/// Position, 4-velocity and elapsed proper time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub x: V4,
    pub u: V4,
    pub s: f64,
}

impl TrajectoryState {
    /// State at `x` moving with coordinate velocity `v = dx/dt`, normalized
    /// against `g`.
    pub fn from_velocity(x: V4, v: [f64; 3], g: &M4) -> Result<Self, DynamicsError> {
        let u = normalized(g, [1.0, v[0], v[1], v[2]]).ok_or(DynamicsError::NotTimelike { x })?;
        Ok(Self { x, u, s: 0.0 })
    }

    /// `dx^j/dt`.
    pub fn velocity(&self) -> [f64; 3] {
        [self.u[1] / self.u[0], self.u[2] / self.u[0], self.u[3] / self.u[0]]
    }
}

fn norm2(g: &M4, u: &V4) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            s += g[a][b] * u[a] * u[b];
        }
    }
    s
}

fn normalized(g: &M4, u: V4) -> Option<V4> {
    let n = norm2(g, &u);
    if !(n > 0.0) {
        return None;
    }
    let r = n.sqrt();
    Some(u.map(|c| c / r))
}

struct Rhs<'a> {
    mass: &'a dyn MassModel,
    ext: &'a ExternalFields,
    e: f64,
    ginv: M4,
}

impl Rhs<'_> {
    /// `du^l/ds = g^la [ (∂_a μ - u_a u^m ∂_m μ)/μ + F_am u^m / μ ]` with
    /// `F_am = C_m,a - C_a,m` and `C = eA + V dt`.
    fn accel(&self, x: &V4, u: &V4) -> Result<V4, DynamicsError> {
        let ms = self.mass.sample(x)?;
        let c = self.ext.coupling(self.e, x).ok_or(DynamicsError::ExitedDomain { x: *x })?;
        let g = &self.ext.metric;
        let mu = ms.mu();
        let lg = ms.log_gradient();
        let mut u_low = [0.0; 4];
        for a in 0..4 {
            u_low[a] = (0..4).map(|b| g[a][b] * u[b]).sum();
        }
        let udm: f64 = (0..4).map(|m| u[m] * lg[m]).sum();
        let mut term = [0.0; 4];
        for a in 0..4 {
            let lorentz: f64 = (0..4).map(|m| (c.dk[m][a] - c.dk[a][m]) * u[m]).sum();
            term[a] = lg[a] - u_low[a] * udm + lorentz / mu;
        }
        let mut acc = [0.0; 4];
        for l in 0..4 {
            acc[l] = (0..4).map(|a| self.ginv[l][a] * term[a]).sum();
        }
        Ok(acc)
    }
}

fn axpy(a: &V4, k: f64, b: &V4) -> V4 {
    std::array::from_fn(|i| a[i] + k * b[i])
}

fn rk4(state: &TrajectoryState, rhs: &Rhs, ds: f64) -> Result<TrajectoryState, DynamicsError> {
    let (x, u) = (state.x, state.u);
    let a1 = rhs.accel(&x, &u)?;
    let (x2, u2) = (axpy(&x, 0.5 * ds, &u), axpy(&u, 0.5 * ds, &a1));
    let a2 = rhs.accel(&x2, &u2)?;
    let (x3, u3) = (axpy(&x, 0.5 * ds, &u2), axpy(&u, 0.5 * ds, &a2));
    let a3 = rhs.accel(&x3, &u3)?;
    let (x4, u4) = (axpy(&x, ds, &u3), axpy(&u, ds, &a3));
    let a4 = rhs.accel(&x4, &u4)?;
    let xn: V4 = std::array::from_fn(|i| x[i] + ds / 6.0 * (u[i] + 2.0 * u2[i] + 2.0 * u3[i] + u4[i]));
    let un: V4 = std::array::from_fn(|i| u[i] + ds / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]));
    let un = normalized(&rhs.ext.metric, un).ok_or(DynamicsError::NotTimelike { x: xn })?;
    // the endpoint must itself be inside the valid region
    rhs.mass.sample(&xn)?;
    Ok(TrajectoryState { x: xn, u: un, s: state.s + ds })
}

fn rhs<'a>(mass: &'a dyn MassModel, ext: &'a ExternalFields, e: f64) -> Result<Rhs<'a>, DynamicsError> {
    let ginv = invert4(&ext.metric).ok_or(DynamicsError::Params("external metric is singular".into()))?;
    Ok(Rhs { mass, ext, e, ginv })
}

/// One RK4 step of the quantum equations of motion in proper time, with the
/// 4-velocity renormalized afterwards.
pub fn eom_step(
    state: &TrajectoryState,
    mass: &dyn MassModel,
    ext: &ExternalFields,
    e: f64,
    ds: f64,
) -> Result<TrajectoryState, DynamicsError> {
    rk4(state, &rhs(mass, ext, e)?, ds)
}

/// [`eom_step`] with the mass replaced by `mβ`.
pub fn classical_step(
    state: &TrajectoryState,
    ext: &ExternalFields,
    p: &ParticleParams,
    ds: f64,
) -> Result<TrajectoryState, DynamicsError> {
    eom_step(state, &ClassicalMass { m: p.m, ext }, ext, p.e, ds)
}

/// Proper-time step keeping every coordinate change below `h / 2`.
pub fn step_for_spacing(h: f64, u: &V4) -> f64 {
    0.5 * h / u.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    ExitedDomain,
    /// Entered a region with `μ² ≤ 0`.
    InvalidMass,
    NotTimelike,
    /// Time stopped increasing along the worldline.
    NonMonotoneTime,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
    /// `μ` at each state.
    pub mu: Vec<f64>,
    pub ds: f64,
    pub order: u32,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryState {
        self.states.last().expect("trajectory has its initial state")
    }

    /// Position at coordinate time `t` by linear interpolation between states.
    pub fn position_at(&self, t: f64) -> Option<V4> {
        let k = self.states.partition_point(|s| s.x[0] < t);
        if k == 0 {
            return (self.states[0].x[0] == t).then_some(self.states[0].x);
        }
        let b = self.states.get(k)?;
        let a = &self.states[k - 1];
        let f = (t - a.x[0]) / (b.x[0] - a.x[0]);
        Some(std::array::from_fn(|i| a.x[i] + f * (b.x[i] - a.x[i])))
    }
}

/// Integrate until coordinate time `t_end` or until the particle halts.
///
/// The last step is shortened so the final state lands close to `t_end`.
pub fn integrate(
    initial: TrajectoryState,
    mass: &dyn MassModel,
    ext: &ExternalFields,
    e: f64,
    ds: f64,
    t_end: f64,
) -> Result<Trajectory, DynamicsError> {
    let r = rhs(mass, ext, e)?;
    let mu0 = mass.sample(&initial.x)?.mu();
    let mut states = vec![initial];
    let mut mu = vec![mu0];
    let mut status = TrajectoryStatus::Completed;
    let mut cur = initial;
    let max_steps = 50_000_000usize;
    // shrinks the closing step when it would overshoot the field domain
    let mut shrink = 1.0;
    for _ in 0..max_steps {
        let remaining = t_end - cur.x[0];
        if remaining <= 1e-9 * t_end.abs().max(1.0) {
            break;
        }
        let closing = cur.u[0] * ds > remaining;
        let step = if closing { shrink * remaining / cur.u[0] } else { ds };
        match rk4(&cur, &r, step) {
            Ok(next) => {
                if !(next.u[0] > 0.0) || !(next.x[0] > cur.x[0]) {
                    status = TrajectoryStatus::NonMonotoneTime;
                    break;
                }
                mu.push(mass.sample(&next.x).map(|m| m.mu()).unwrap_or(f64::NAN));
                states.push(next);
                cur = next;
            }
            Err(DynamicsError::ExitedDomain { .. }) if closing && shrink > 1e-6 => shrink *= 0.5,
            Err(DynamicsError::ExitedDomain { .. }) => {
                status = TrajectoryStatus::ExitedDomain;
                break;
            }
            Err(DynamicsError::InvalidMass { .. }) => {
                status = TrajectoryStatus::InvalidMass;
                break;
            }
            Err(DynamicsError::NotTimelike { .. }) => {
                status = TrajectoryStatus::NotTimelike;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory { states, mu, ds, order: 4, status })
}

/// Columns `s, t, x, y, z, u_t, u_x, u_y, u_z, mu`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "t", "x", "y", "z", "u_t", "u_x", "u_y", "u_z", "mu"])?;
    for (st, mu) in traj.states.iter().zip(&traj.mu) {
        let mut row = vec![st.s];
        row.extend_from_slice(&st.x);
        row.extend_from_slice(&st.u);
        row.push(*mu);
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{MassSample, QuantumMassField, VectorSource};
    use crate::geometry::{CovectorJet, MINKOWSKI};
    use crate::grid::{Boundary, Coord, GridSpec};
    use std::sync::Arc;

    #[test]
    fn force_free_motion_is_straight() {
        let ext = ExternalFields::flat();
        let p = ParticleParams::default();
        let mut s = TrajectoryState::from_velocity([0.0; 4], [0.3, -0.1, 0.0], &MINKOWSKI).unwrap();
        let u0 = s.u;
        for _ in 0..100 {
            s = classical_step(&s, &ext, &p, 0.05).unwrap();
            assert!((norm2(&MINKOWSKI, &s.u) - 1.0).abs() <= 1e-12);
        }
        for i in 0..4 {
            assert!((s.u[i] - u0[i]).abs() < 1e-14);
        }
        let v = s.velocity();
        assert!((s.x[1] / s.x[0] - v[0]).abs() < 1e-12);
    }

    /// Constant electric field along x: hyperbolic motion, `p_x = eE t` from rest.
    #[test]
    fn constant_electric_field_gives_hyperbolic_motion() {
        let e_field = 0.2;
        // A_0 = -E x gives F_{x t} = A_t,x - A_x,t = -E, i.e. a push toward +x
        let a = VectorSource::Analytic(Arc::new(move |x: &V4| {
            let mut dk = [[0.0; 4]; 4];
            dk[0][1] = -e_field;
            CovectorJet { k: [-e_field * x[1], 0.0, 0.0, 0.0], dk }
        }));
        let ext = ExternalFields::flat().with_vector_potential(a);
        let p = ParticleParams::default();
        let traj = integrate(TrajectoryState::from_velocity([0.0; 4], [0.0; 3], &MINKOWSKI).unwrap(), &ClassicalMass { m: 1.0, ext: &ext }, &ext, p.e, 0.01, 2.0).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        let end = traj.last();
        let t = end.x[0];
        let (k, m) = (p.e * e_field, p.m);
        let x_exact = (m / k) * ((1.0 + (k * t / m).powi(2)).sqrt() - 1.0);
        let v_exact = k * t / (m * (1.0 + (k * t / m).powi(2)).sqrt());
        assert!((end.x[1] - x_exact).abs() < 1e-9, "{} {}", end.x[1], x_exact);
        assert!((end.velocity()[0] - v_exact).abs() < 1e-9);
        // small t: v ≈ eE t / m
        let early = traj.states[10];
        assert!((early.velocity()[0] - k * early.x[0] / m).abs() < 1e-3 * early.x[0]);
    }

    struct Bump;

    impl MassModel for Bump {
        fn sample(&self, x: &V4) -> Result<MassSample, DynamicsError> {
            let g = (-x[1] * x[1]).exp();
            Ok(MassSample { mu2: 1.0 + 0.5 * g, grad_mu2: [0.0, -x[1] * g, 0.0, 0.0] })
        }
    }

    fn energy_spread(mass: &dyn MassModel, ds: f64) -> (f64, f64) {
        let start = TrajectoryState::from_velocity([0.0, -2.0, 0.0, 0.0], [0.4, 0.0, 0.0], &MINKOWSKI).unwrap();
        let traj = integrate(start, mass, &ExternalFields::flat(), 0.0, ds, 8.0).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        let energy = |st: &TrajectoryState| mass.sample(&st.x).unwrap().mu() * st.u[0];
        let e0 = energy(&traj.states[0]);
        let spread = traj.states.iter().map(|st| ((energy(st) - e0) / e0).abs()).fold(0.0, f64::max);
        let vmin = traj.states.iter().map(|s| s.velocity()[0]).fold(f64::INFINITY, f64::min);
        (spread, vmin)
    }

    #[test]
    fn static_mass_conserves_energy() {
        let (spread, vmin) = energy_spread(&Bump, 0.01);
        assert!(spread < 1e-9, "{spread}");
        // the particle slows down crossing the bump
        assert!(vmin < 0.35);
        // on a grid the interpolated gradient adds an O(h²) error
        let g = GridSpec::line(Coord::X, -5.0, 5.0, 401, Boundary::OneSided).unwrap();
        let mu = QuantumMassField::from_values(&g, g.sample(|p| 1.0 + 0.5 * (-p[1] * p[1]).exp())).unwrap();
        let (spread, _) = energy_spread(&mu, 0.01);
        assert!(spread < 1e-3, "{spread}");
    }

    #[test]
    fn halts_at_invalid_mass_and_domain_edge() {
        let g = GridSpec::line(Coord::X, -1.0, 1.0, 41, Boundary::OneSided).unwrap();
        let mu = QuantumMassField::from_values(&g, g.sample(|p| if p[1] > 0.5 { -1.0 } else { 1.0 })).unwrap();
        let ext = ExternalFields::flat();
        let go = |v: f64| {
            let s = TrajectoryState::from_velocity([0.0; 4], [v, 0.0, 0.0], &MINKOWSKI).unwrap();
            integrate(s, &mu, &ext, 0.0, 0.01, 5.0).unwrap().status
        };
        assert_eq!(go(0.5), TrajectoryStatus::InvalidMass);
        assert_eq!(go(-0.5), TrajectoryStatus::ExitedDomain);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ext = ExternalFields::flat();
        let s = TrajectoryState::from_velocity([0.0; 4], [0.1, 0.0, 0.0], &MINKOWSKI).unwrap();
        let traj = integrate(s, &ClassicalMass { m: 1.0, ext: &ext }, &ext, 0.0, 0.1, 1.0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,t,x,y,z,u_t,u_x,u_y,u_z,mu\n"));
        assert_eq!(text.lines().count(), traj.states.len() + 1);
        assert!((traj.last().x[0] - 1.0).abs() < 1e-12);
    }
}
