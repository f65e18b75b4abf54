//! Reference solutions of viscous Burgers on periodic grids.
//!
//! Method of lines with second-order central differences and RK4-3/8 in
//! time. In 1-D the advection term defaults to the conservative flux form
//! `(u²/2)_x`, which keeps `Σ u` constant to round-off. The 2-D system is
//! written in advective form.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::integrator::{rk4_38_step, TensorSystem};
use crate::tensor::Tensor;

/// Normalisation denominators smaller than this trigger a redraw.
pub const DEGENERATE: f64 = 1e-8;
/// Velocity bound assumed by the stability guard.
pub const U_MAX_EST: f64 = 3.0;

/// `w(x) = a0 + Σ a_l sin(2lπx) + b_l cos(2lπx)`, `u = 2w / (max|w| + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierIC1D {
    pub a0: f64,
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub c: f64,
}

impl FourierIC1D {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut n = || -> f64 { rng.sample(StandardNormal) };
        let a0 = n();
        let a = [n(), n(), n(), n()];
        let b = [n(), n(), n(), n()];
        let c = Uniform::new(-1.0, 1.0).expect("valid range").sample(rng);
        FourierIC1D { a0, a, b, c }
    }

    pub fn w(&self, x: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let mut w = self.a0;
        for l in 0..4 {
            let k = tau * (l + 1) as f64 * x;
            w += self.a[l] * k.sin() + self.b[l] * k.cos();
        }
        w
    }

    /// Normalised field on `nx` points of `[0, 1)`; `None` when degenerate.
    pub fn field(&self, nx: usize) -> Option<Vec<f64>> {
        let w: Vec<f64> = (0..nx).map(|i| self.w(i as f64 / nx as f64)).collect();
        let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = m + self.c;
        if m < DEGENERATE || denom.abs() < DEGENERATE {
            return None;
        }
        Some(w.iter().map(|v| 2.0 * v / denom).collect())
    }
}

/// Draw until the normalisation is well defined.
pub fn sample_ic_1d<R: Rng + ?Sized>(rng: &mut R, nx: usize) -> (FourierIC1D, Vec<f64>) {
    loop {
        let ic = FourierIC1D::draw(rng);
        if let Some(u) = ic.field(nx) {
            return (ic, u);
        }
    }
}

/// Two-channel Fourier series over wavenumbers `i, j ∈ [-4, 4]`,
/// `u = 2w / max|w| + c` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierIC2D {
    /// `a[(i+4)*9 + (j+4)]` for each channel.
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub c: [f64; 2],
}

impl FourierIC2D {
    pub const MODES: i32 = 4;
    const SIDE: usize = 2 * Self::MODES as usize + 1;

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let count = Self::SIDE * Self::SIDE;
        let pair = |rng: &mut R| -> [f64; 2] { [rng.sample(StandardNormal), rng.sample(StandardNormal)] };
        let a = (0..count).map(|_| pair(rng)).collect();
        let b = (0..count).map(|_| pair(rng)).collect();
        let unit = Uniform::new(-1.0, 1.0).expect("valid range");
        let c = [unit.sample(rng), unit.sample(rng)];
        FourierIC2D { a, b, c }
    }

    pub fn w(&self, x: f64, y: f64) -> [f64; 2] {
        let tau = 2.0 * std::f64::consts::PI;
        let mut w = [0.0; 2];
        let m = Self::MODES;
        for i in -m..=m {
            for j in -m..=m {
                let k = ((i + m) as usize) * Self::SIDE + (j + m) as usize;
                let phase = tau * (i as f64 * x + j as f64 * y);
                let (s, c) = phase.sin_cos();
                for ch in 0..2 {
                    w[ch] += self.a[k][ch] * s + self.b[k][ch] * c;
                }
            }
        }
        w
    }

    /// Normalised `nx·ny × 2` field, node index `iy·nx + ix`; `None` when degenerate.
    pub fn field(&self, nx: usize, ny: usize) -> Option<Vec<f64>> {
        let mut w = Vec::with_capacity(nx * ny * 2);
        for iy in 0..ny {
            for ix in 0..nx {
                w.extend(self.w(ix as f64 / nx as f64, iy as f64 / ny as f64));
            }
        }
        let mut out = w.clone();
        for ch in 0..2 {
            let m = w.iter().skip(ch).step_by(2).fold(0.0f64, |m, v| m.max(v.abs()));
            if m < DEGENERATE {
                return None;
            }
            for v in out.iter_mut().skip(ch).step_by(2) {
                *v = 2.0 * *v / m + self.c[ch];
            }
        }
        Some(out)
    }
}

pub fn sample_ic_2d<R: Rng + ?Sized>(rng: &mut R, nx: usize, ny: usize) -> (FourierIC2D, Vec<f64>) {
    loop {
        let ic = FourierIC2D::draw(rng);
        if let Some(u) = ic.field(nx, ny) {
            return (ic, u);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdvectionForm {
    /// `(u²/2)_x` with the central stencil; 1-D only.
    #[default]
    Conservative,
    /// `u·u_x` with the central stencil.
    Advective,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// `[nx]` or `[nx, ny]`.
    pub dims: Vec<usize>,
    pub length: f64,
    pub nu: f64,
    pub dt_ref: f64,
    pub advection: bool,
    pub form: AdvectionForm,
}

impl SolverConfig {
    pub fn burgers_1d(nx: usize, nu: f64, dt_ref: f64) -> Result<Self> {
        SolverConfig {
            dims: vec![nx],
            length: 1.0,
            nu,
            dt_ref,
            advection: true,
            form: AdvectionForm::Conservative,
        }
        .validated()
    }

    pub fn burgers_2d(nx: usize, ny: usize, nu: f64, dt_ref: f64) -> Result<Self> {
        SolverConfig {
            dims: vec![nx, ny],
            length: 1.0,
            nu,
            dt_ref,
            advection: true,
            form: AdvectionForm::Advective,
        }
        .validated()
    }

    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn with_form(mut self, form: AdvectionForm) -> Result<Self> {
        self.form = form;
        self.validated()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.dims.iter().map(|&n| self.length / n as f64).collect()
    }

    /// Largest step the guard allows for velocities up to `u_max`.
    pub fn stable_dt(&self, u_max: f64) -> f64 {
        let h = self.spacing().into_iter().fold(f64::INFINITY, f64::min);
        let diffusive = h * h / (4.0 * self.nu * self.ndim() as f64);
        let advective = h / (4.0 * u_max);
        diffusive.min(advective)
    }

    pub fn validated(self) -> Result<Self> {
        if self.dims.is_empty() || self.dims.len() > 2 || self.dims.iter().any(|&n| n < 3) {
            return Err(Error::config(format!("bad solver grid {:?}", self.dims)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::config(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt_ref > 0.0 && self.dt_ref.is_finite()) {
            return Err(Error::config(format!("dt_ref must be positive, got {}", self.dt_ref)));
        }
        if self.ndim() == 2 && self.form == AdvectionForm::Conservative {
            return Err(Error::config("the 2-D solver uses the advective form"));
        }
        let limit = self.stable_dt(U_MAX_EST);
        if self.dt_ref > limit {
            return Err(Error::config(format!(
                "dt_ref {} exceeds the stability limit {limit:.6e} for grid {:?}, nu {}",
                self.dt_ref, self.dims, self.nu
            )));
        }
        Ok(self)
    }
}

fn rhs_1d(u: &[f64], cfg: &SolverConfig, h: f64) -> Vec<f64> {
    let n = u.len();
    let inv2h = 1.0 / (2.0 * h);
    let invh2 = 1.0 / (h * h);
    (0..n)
        .map(|i| {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            let diffusion = cfg.nu * ((u[r] - 2.0 * u[i] + u[l]) * invh2);
            let advection = if !cfg.advection {
                0.0
            } else {
                match cfg.form {
                    AdvectionForm::Conservative => (0.5 * u[r] * u[r] - 0.5 * u[l] * u[l]) * inv2h,
                    AdvectionForm::Advective => u[i] * ((u[r] - u[l]) * inv2h),
                }
            };
            diffusion - advection
        })
        .collect()
}

fn rhs_2d(u: &[f64], cfg: &SolverConfig, hx: f64, hy: f64) -> Vec<f64> {
    let (nx, ny) = (cfg.dims[0], cfg.dims[1]);
    let (inv2hx, inv2hy) = (1.0 / (2.0 * hx), 1.0 / (2.0 * hy));
    let (invhx2, invhy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let mut out = vec![0.0; u.len()];
    for iy in 0..ny {
        let (dn, up) = ((iy + ny - 1) % ny, (iy + 1) % ny);
        for ix in 0..nx {
            let (lf, rt) = ((ix + nx - 1) % nx, (ix + 1) % nx);
            let i = iy * nx + ix;
            let (xl, xr) = (iy * nx + lf, iy * nx + rt);
            let (yd, yu) = (dn * nx + ix, up * nx + ix);
            let (vu, vv) = (u[2 * i], u[2 * i + 1]);
            for ch in 0..2 {
                let c = u[2 * i + ch];
                let dxx = (u[2 * xr + ch] - 2.0 * c + u[2 * xl + ch]) * invhx2;
                let dyy = (u[2 * yu + ch] - 2.0 * c + u[2 * yd + ch]) * invhy2;
                let diffusion = cfg.nu * (dxx + dyy);
                let advection = if cfg.advection {
                    vu * ((u[2 * xr + ch] - u[2 * xl + ch]) * inv2hx)
                        + vv * ((u[2 * yu + ch] - u[2 * yd + ch]) * inv2hy)
                } else {
                    0.0
                };
                out[2 * i + ch] = diffusion - advection;
            }
        }
    }
    out
}

/// Right-hand side `u_t` of the discretised equations (`n × ndim` state).
pub fn burgers_rhs(u: &Tensor, cfg: &SolverConfig) -> Result<Tensor> {
    let n: usize = cfg.dims.iter().product();
    if u.shape() != [n, cfg.ndim()] {
        return Err(Error::shape(
            "burgers_rhs",
            format!("state {:?} on grid {:?}", u.shape(), cfg.dims),
        ));
    }
    let h = cfg.spacing();
    let data = match cfg.ndim() {
        1 => rhs_1d(u.data(), cfg, h[0]),
        _ => rhs_2d(u.data(), cfg, h[0], h[1]),
    };
    Tensor::new(u.shape().to_vec(), data)
}

/// Integrate from `u0` and return `n_saves + 1` states spaced
/// `save_every · dt_ref` apart, the first being `u0` itself.
///
/// If the initial field exceeds the velocity bound the guard assumed, each
/// reference step is split into enough substeps to stay within it.
pub fn solve(u0: &[f64], cfg: &SolverConfig, save_every: usize, n_saves: usize) -> Result<Vec<Vec<f64>>> {
    let n: usize = cfg.dims.iter().product();
    let d = cfg.ndim();
    let state = Tensor::matrix(n, d, u0.to_vec())?;
    if save_every == 0 {
        return Err(Error::config("save_every must be positive"));
    }
    let u_max = state.max_abs();
    let substeps = if u_max > U_MAX_EST {
        let k = (cfg.dt_ref / cfg.stable_dt(u_max)).ceil().max(1.0);
        if k > 1e5 {
            return Err(Error::config(format!("initial field too large to integrate (max |u| = {u_max:e})")));
        }
        k as usize
    } else {
        1
    };
    let dt = cfg.dt_ref / substeps as f64;
    let mut sys = TensorSystem::new(|u: &Tensor| burgers_rhs(u, cfg));
    let mut out = Vec::with_capacity(n_saves + 1);
    out.push(u0.to_vec());
    let mut u = state;
    for save in 1..=n_saves {
        for k in 0..save_every * substeps {
            u = rk4_38_step(&mut sys, &u, dt).map_err(|e| {
                let step = (save - 1) * save_every * substeps + k + 1;
                e.with_context(format!("reference solve at t = {:.6}", step as f64 * dt))
            })?;
        }
        out.push(u.data().to_vec());
    }
    Ok(out)
}

pub fn solve_burgers_1d(u0: &[f64], cfg: &SolverConfig, save_every: usize, n_saves: usize) -> Result<Vec<Vec<f64>>> {
    if cfg.ndim() != 1 {
        return Err(Error::config("solve_burgers_1d needs a 1-D solver config"));
    }
    solve(u0, cfg, save_every, n_saves)
}

pub fn solve_burgers_2d(u0: &[f64], cfg: &SolverConfig, save_every: usize, n_saves: usize) -> Result<Vec<Vec<f64>>> {
    if cfg.ndim() != 2 {
        return Err(Error::config("solve_burgers_2d needs a 2-D solver config"));
    }
    solve(u0, cfg, save_every, n_saves)
}

/// What to generate: random initial conditions solved on the reference
/// grid, stored every `save_every` reference steps, then restricted to
/// every `stride`-th grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSpec {
    pub solver: SolverConfig,
    pub n_samples: usize,
    pub save_every: usize,
    /// Stored snapshots per sample, including `t = 0`.
    pub n_times: usize,
    pub stride: usize,
    pub seed: u64,
}

/// Per-sample generator: the stream index keeps samples independent of
/// thread scheduling and of how many samples are drawn.
pub fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

pub fn generate(spec: &GenerateSpec) -> Result<SnapshotDataset> {
    if spec.n_times == 0 {
        return Err(Error::config("n_times must be at least 1"));
    }
    let cfg = &spec.solver;
    let samples: Vec<Vec<Vec<f64>>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(spec.seed, s);
            let u0 = match cfg.dims[..] {
                [nx] => sample_ic_1d(&mut rng, nx).1,
                [nx, ny] => sample_ic_2d(&mut rng, nx, ny).1,
                _ => unreachable!(),
            };
            solve(&u0, cfg, spec.save_every, spec.n_times - 1)
                .map_err(|e| e.with_context(format!("sample {s}")))
        })
        .collect::<Result<_>>()?;
    let data: Vec<f64> = samples.into_iter().flatten().flatten().collect();
    let channels = ["u", "v"][..cfg.ndim()].iter().map(|s| s.to_string()).collect();
    let full = SnapshotDataset::new(
        cfg.dims.clone(),
        cfg.length,
        cfg.nu,
        cfg.dt_ref * spec.save_every as f64,
        spec.n_samples,
        spec.n_times,
        channels,
        spec.seed,
        data,
    )?;
    if spec.stride == 1 {
        Ok(full)
    } else {
        full.restrict(spec.stride)
    }
}

/// Keep every `(dt_train / ds.dt)`-th snapshot starting at `t = 0`.
pub fn subsample_snapshots(ds: &SnapshotDataset, dt_train: f64) -> Result<SnapshotDataset> {
    let ratio = dt_train / ds.dt;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * k {
        return Err(Error::config(format!(
            "dt_train {dt_train} is not an integer multiple of {}",
            ds.dt
        )));
    }
    ds.subsample_times(k as usize)
}

/// Second-order central differences on a periodic grid.
///
/// `field` is `n × c`. Order 1 returns `n × (c·ndim)` with columns
/// `[∂_x f0, ∂_y f0, ∂_x f1, ∂_y f1]`; order 2 returns `n × (c·ndim²)` with
/// columns `[∂_xx f0, ∂_xy f0, ∂_yx f0, ∂_yy f0, …]`. In 1-D both reduce to
/// a single column per channel.
pub fn central_difference_oracle(field: &Tensor, dims: &[usize], spacing: &[f64], order: usize) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let ndim = dims.len();
    if field.rows() != n || spacing.len() != ndim || !(1..=2).contains(&ndim) {
        return Err(Error::shape(
            "central_difference_oracle",
            format!("field {:?} on grid {dims:?}", field.shape()),
        ));
    }
    let c = field.cols();
    let nx = dims[0];
    let ny = dims.get(1).copied().unwrap_or(1);
    let at = |ix: isize, iy: isize, ch: usize| -> f64 {
        let x = ix.rem_euclid(nx as isize) as usize;
        let y = iy.rem_euclid(ny as isize) as usize;
        field.row(y * nx + x)[ch]
    };
    let step = |axis: usize| -> (isize, isize) {
        if axis == 0 {
            (1, 0)
        } else {
            (0, 1)
        }
    };
    let width = match order {
        1 => c * ndim,
        2 => c * ndim * ndim,
        other => return Err(Error::config(format!("derivative order {other} not supported"))),
    };
    let mut out = Vec::with_capacity(n * width);
    for iy in 0..ny as isize {
        for ix in 0..nx as isize {
            for ch in 0..c {
                if order == 1 {
                    for a in 0..ndim {
                        let (sx, sy) = step(a);
                        out.push((at(ix + sx, iy + sy, ch) - at(ix - sx, iy - sy, ch)) / (2.0 * spacing[a]));
                    }
                } else {
                    for a in 0..ndim {
                        for b in 0..ndim {
                            let v = if a == b {
                                let (sx, sy) = step(a);
                                (at(ix + sx, iy + sy, ch) - 2.0 * at(ix, iy, ch) + at(ix - sx, iy - sy, ch))
                                    / (spacing[a] * spacing[a])
                            } else {
                                (at(ix + 1, iy + 1, ch) - at(ix + 1, iy - 1, ch) - at(ix - 1, iy + 1, ch)
                                    + at(ix - 1, iy - 1, ch))
                                    / (4.0 * spacing[0] * spacing[1])
                            };
                            out.push(v);
                        }
                    }
                }
            }
        }
    }
    Tensor::matrix(n, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_mode_ic() {
        let ic = FourierIC1D {
            a0: 1.0,
            a: [0.0; 4],
            b: [0.0; 4],
            c: 0.0,
        };
        assert!(ic.field(16).unwrap().iter().all(|&v| v == 2.0));
        let zero = FourierIC1D { a0: 0.0, ..ic };
        assert!(zero.field(16).is_none());
    }

    #[test]
    fn ic_sampling_is_seeded() {
        let (_, a) = sample_ic_1d(&mut sample_rng(5, 3), 64);
        let (_, b) = sample_ic_1d(&mut sample_rng(5, 3), 64);
        let (_, c) = sample_ic_1d(&mut sample_rng(5, 4), 64);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (_, u) = sample_ic_2d(&mut sample_rng(1, 0), 8, 8);
        let (_, v) = sample_ic_2d(&mut sample_rng(1, 0), 8, 8);
        assert_eq!(u, v);
    }

    #[test]
    fn two_d_ic_bound() {
        for s in 0..20 {
            let (ic, u) = sample_ic_2d(&mut sample_rng(11, s), 12, 10);
            for ch in 0..2 {
                let bound = 2.0 + ic.c[ch].abs();
                assert!(u.iter().skip(ch).step_by(2).all(|v| v.abs() <= bound + 1e-12));
                assert!(bound <= 3.0);
            }
        }
    }

    #[test]
    fn single_mode_2d_ic_is_a_sinusoid() {
        let mut ic = FourierIC2D::draw(&mut sample_rng(0, 0));
        ic.a.iter_mut().for_each(|p| *p = [0.0, 0.0]);
        ic.b.iter_mut().for_each(|p| *p = [0.0, 0.0]);
        // i = 1, j = 0
        let k = 5 * 9 + 4;
        ic.a[k] = [0.7, -1.3];
        let u = ic.field(8, 8).unwrap();
        for iy in 0..8 {
            for ix in 0..8 {
                let s = (2.0 * PI * ix as f64 / 8.0).sin();
                let node = iy * 8 + ix;
                assert!((u[2 * node] - (2.0 * s + ic.c[0])).abs() < 1e-12);
                assert!((u[2 * node + 1] - (-2.0 * s + ic.c[1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_means_are_standard() {
        let n = 1000;
        let mean: f64 = (0..n)
            .map(|s| FourierIC1D::draw(&mut sample_rng(77, s)).a[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn guard_rejects_oversized_steps() {
        assert!(SolverConfig::burgers_1d(512, 0.0025, 0.001).is_err());
        assert!(SolverConfig::burgers_2d(64, 64, 0.005, 0.005).is_err());
        assert!(SolverConfig::burgers_1d(512, 0.0025, 0.00014).is_ok());
        assert!(SolverConfig::burgers_2d(64, 64, 0.005, 0.001).is_ok());
        assert!(SolverConfig::burgers_1d(512, 0.0, 1e-5).is_err());
    }

    #[test]
    fn constant_states_are_fixed_points() {
        let cfg = SolverConfig::burgers_1d(32, 0.0025, 1e-3).unwrap();
        let out = solve_burgers_1d(&[2.0; 32], &cfg, 1, 100).unwrap();
        assert!(out[100].iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let cfg2 = SolverConfig::burgers_2d(8, 8, 0.005, 1e-3).unwrap();
        let u0: Vec<f64> = [1.5, -0.5].repeat(64);
        let out = solve_burgers_2d(&u0, &cfg2, 5, 4).unwrap();
        assert!(out[4].iter().zip(&u0).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn heat_decay_matches_closed_form() {
        let nu = 0.0025;
        let cfg = SolverConfig::burgers_1d(512, nu, 1e-4).unwrap().without_advection();
        let u0: Vec<f64> = (0..512).map(|i| (2.0 * PI * i as f64 / 512.0).sin()).collect();
        let out = solve_burgers_1d(&u0, &cfg, 1000, 10).unwrap();
        let amp = out[10][128];
        let exact = (-nu * 4.0 * PI * PI).exp();
        assert!(((amp - exact) / exact).abs() < 1e-3);
    }

    #[test]
    fn two_d_heat_decay_per_mode() {
        let nu = 0.005;
        let cfg = SolverConfig::burgers_2d(32, 32, nu, 1e-3).unwrap().without_advection();
        let mut u0 = Vec::new();
        for iy in 0..32 {
            for ix in 0..32 {
                let (x, y) = (ix as f64 / 32.0, iy as f64 / 32.0);
                u0.push((2.0 * PI * x).sin());
                u0.push((2.0 * PI * (x + y)).cos());
            }
        }
        let out = solve_burgers_2d(&u0, &cfg, 100, 5).unwrap();
        let t = 0.5;
        let k2 = 4.0 * PI * PI;
        // node (ix=8, iy=0): sin = 1; node (0, 0): cos = 1
        let u = out[5][2 * 8];
        let v = out[5][1];
        assert!((u / (-nu * k2 * t).exp() - 1.0).abs() < 1e-3);
        assert!((v / (-nu * 2.0 * k2 * t).exp() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mass_is_conserved_in_1d() {
        let cfg = SolverConfig::burgers_1d(512, 0.0025, 1.4e-4).unwrap();
        let (_, u0) = sample_ic_1d(&mut sample_rng(3, 0), 512);
        let out = solve_burgers_1d(&u0, &cfg, 50, 30).unwrap();
        let m0: f64 = u0.iter().sum();
        let scale: f64 = u0.iter().map(|v| v.abs()).sum();
        let m1: f64 = out[30].iter().sum();
        assert!((m1 - m0).abs() / scale < 1e-10);
    }

    #[test]
    fn two_d_reduces_to_1d_advective() {
        let nu = 0.005;
        let n = 64;
        let cfg1 = SolverConfig::burgers_1d(n, nu, 1e-3)
            .unwrap()
            .with_form(AdvectionForm::Advective)
            .unwrap();
        let cfg2 = SolverConfig::burgers_2d(n, 8, nu, 1e-3).unwrap();
        let (_, u1) = sample_ic_1d(&mut sample_rng(9, 0), n);
        let u2: Vec<f64> = (0..8).flat_map(|_| u1.iter().flat_map(|&u| [u, 0.0])).collect();
        let a = solve_burgers_1d(&u1, &cfg1, 10, 5).unwrap();
        let b = solve_burgers_2d(&u2, &cfg2, 10, 5).unwrap();
        let norm = a[5].iter().map(|v| v * v).sum::<f64>().sqrt();
        for row in 0..8 {
            let err: f64 = (0..n)
                .map(|ix| (b[5][2 * (row * n + ix)] - a[5][ix]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err / norm < 1e-8);
            assert!((0..n).all(|ix| b[5][2 * (row * n + ix) + 1] == 0.0));
        }
    }

    #[test]
    fn halving_dt_barely_changes_solution() {
        let cfg = SolverConfig::burgers_1d(128, 0.0025, 4e-4).unwrap();
        let half = SolverConfig { dt_ref: 2e-4, ..cfg.clone() };
        let (_, u0) = sample_ic_1d(&mut sample_rng(4, 0), 128);
        let a = solve_burgers_1d(&u0, &cfg, 50, 1).unwrap();
        let b = solve_burgers_1d(&u0, &half, 100, 1).unwrap();
        let diff = a[1].iter().zip(&b[1]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm = a[1].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-6, "{}", diff / norm);
    }

    #[test]
    fn large_initial_fields_are_substepped() {
        let cfg = SolverConfig::burgers_1d(64, 0.0025, 1e-3).unwrap();
        let u0: Vec<f64> = (0..64).map(|i| 8.0 * (2.0 * PI * i as f64 / 64.0).sin()).collect();
        let out = solve_burgers_1d(&u0, &cfg, 1, 20).unwrap();
        assert!(out[20].iter().all(|v| v.is_finite() && v.abs() < 12.0));
    }

    #[test]
    fn blow_up_reports_time() {
        let cfg = SolverConfig::burgers_1d(8, 0.0025, 1e-3).unwrap();
        let mut u0 = vec![0.0; 8];
        u0[3] = f64::NAN;
        let err = solve_burgers_1d(&u0, &cfg, 1, 3).unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("t = "), "{err}");
    }

    #[test]
    fn central_differences() {
        let n = 512;
        let h = 1.0 / n as f64;
        let u = Tensor::matrix(n, 1, (0..n).map(|i| (2.0 * PI * i as f64 * h).sin()).collect()).unwrap();
        let du = central_difference_oracle(&u, &[n], &[h], 1).unwrap();
        for i in 0..n {
            assert!((du.data()[i] - 2.0 * PI * (2.0 * PI * i as f64 * h).cos()).abs() < 1e-3);
        }
        let c = Tensor::filled(vec![n, 1], 3.0);
        assert!(central_difference_oracle(&c, &[n], &[h], 2).unwrap().data().iter().all(|&v| v == 0.0));
        let x = Tensor::matrix(16, 1, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let dx = central_difference_oracle(&x, &[16], &[1.0 / 16.0], 1).unwrap();
        assert!((1..15).all(|i| (dx.data()[i] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn central_differences_2d_layout() {
        // u = x·y, v = y² on interior nodes
        let (nx, ny) = (8, 8);
        let h = 1.0 / 8.0;
        let mut f = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let (x, y) = (ix as f64 * h, iy as f64 * h);
                f.extend([x * y, y * y]);
            }
        }
        let f = Tensor::matrix(64, 2, f).unwrap();
        let g = central_difference_oracle(&f, &[nx, ny], &[h, h], 1).unwrap();
        let hh = central_difference_oracle(&f, &[nx, ny], &[h, h], 2).unwrap();
        let node = 3 * nx + 4;
        let (x, y) = (4.0 * h, 3.0 * h);
        let expect_g = [y, x, 0.0, 2.0 * y];
        let expect_h = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        for k in 0..4 {
            assert!((g.row(node)[k] - expect_g[k]).abs() < 1e-12);
        }
        for k in 0..8 {
            assert!((hh.row(node)[k] - expect_h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_sizes_and_determinism() {
        let spec = GenerateSpec {
            solver: SolverConfig::burgers_1d(64, 0.0025, 1e-3).unwrap(),
            n_samples: 3,
            save_every: 7,
            n_times: 4,
            stride: 2,
            seed: 12,
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a.dims, vec![32]);
        assert_eq!(a.data().len(), 3 * 4 * 32);
        assert!((a.dt - 0.007).abs() < 1e-15);
        assert_eq!(a, generate(&spec).unwrap());
        let more = generate(&GenerateSpec { n_samples: 5, ..spec.clone() }).unwrap();
        assert_eq!(more.snapshot_slice(2, 3), a.snapshot_slice(2, 3));
    }

    #[test]
    fn subsampling_ratios() {
        let data: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let ds = SnapshotDataset::new(vec![3], 1.0, 0.005, 0.005, 1, 10, vec!["u".into()], 0, data).unwrap();
        let sub = subsample_snapshots(&ds, 0.02).unwrap();
        assert_eq!(sub.n_times, 3);
        assert_eq!(sub.snapshot_slice(0, 2), ds.snapshot_slice(0, 8));
        assert!(subsample_snapshots(&ds, 0.012).is_err());
        assert_eq!(subsample_snapshots(&ds, 0.005).unwrap(), ds);
    }
}
