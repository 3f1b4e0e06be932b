//! Scenario parameters, RIS geometry and the propagation paths derived from it.
//!
//! The RIS lies in the y–z plane of its local frame with the surface normal on
//! +x. Positions are given in that frame. Every physical quantity is in SI
//! units.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Real, SPEED_OF_LIGHT};

pub type Vec3<T> = [T; 3];

/// Rectangular grid of reflectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisGrid<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Element width (m).
    pub d_h: T,
    /// Element height (m).
    pub d_v: T,
}

impl<T: Real> RisGrid<T> {
    pub fn new(n_rows: usize, n_cols: usize, d_h: T, d_v: T) -> Result<Self> {
        let grid = Self {
            n_rows,
            n_cols,
            d_h,
            d_v,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// `side × side` grid with square elements.
    pub fn square(side: usize, spacing: T) -> Result<Self> {
        Self::new(side, side, spacing, spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::InvalidScenario(format!(
                "RIS grid must have at least one element, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(self.d_h > T::zero() && self.d_v > T::zero()) {
            return Err(Error::InvalidScenario(format!(
                "RIS element sides must be positive, got d_h={} d_v={}",
                self.d_h, self.d_v
            )));
        }
        Ok(())
    }

    /// Number of reflectors `N`.
    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Azimuth/elevation pair in the RIS frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathAngles<T> {
    pub azimuth: T,
    pub elevation: T,
}

impl<T: Real> PathAngles<T> {
    pub fn new(azimuth: T, elevation: T) -> Result<Self> {
        let half_pi = T::FRAC_PI_2();
        if !azimuth.is_finite() || azimuth < -T::PI() || azimuth > T::PI() {
            return Err(Error::InvalidArgument(format!(
                "azimuth {azimuth} outside [-π, π]"
            )));
        }
        if !elevation.is_finite() || elevation < -half_pi || elevation > half_pi {
            return Err(Error::InvalidArgument(format!(
                "elevation {elevation} outside [-π/2, π/2]"
            )));
        }
        Ok(Self { azimuth, elevation })
    }

    /// Angles of the direction `v` (need not be normalized, must be nonzero).
    pub fn from_direction(v: Vec3<T>) -> Result<Self> {
        let norm = norm3(v);
        if !(norm > T::zero()) {
            return Err(Error::DegenerateGeometry("zero-length direction".into()));
        }
        let elevation = (v[2] / norm).max(-T::one()).min(T::one()).asin();
        let azimuth = v[1].atan2(v[0]);
        Self::new(azimuth, elevation)
    }

    /// Unit vector `[cos φ cos ϕ, sin φ cos ϕ, sin ϕ]`.
    pub fn unit_vector(&self) -> Vec3<T> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ca * ce, sa * ce, se]
    }
}

/// AP→RIS path (one of the `L_a` group).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApRisPath<T> {
    pub delay_s: T,
    pub gain: T,
    pub angles: PathAngles<T>,
    pub los: bool,
}

/// RIS→UE path (one of the `L_b` group).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisUePath<T> {
    pub delay_s: T,
    pub gain: T,
    pub angles: PathAngles<T>,
    pub doppler_hz: T,
    pub los: bool,
}

/// AP→UE path; the direct link is NLOS only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPath<T> {
    pub delay_s: T,
    pub gain: T,
    pub doppler_hz: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T> {
    pub ap_ris: Vec<ApRisPath<T>>,
    pub ris_ue: Vec<RisUePath<T>>,
    /// May be empty for a blocked direct link.
    pub direct: Vec<DirectPath<T>>,
}

impl<T: Real> PathSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.ap_ris.is_empty() && self.ris_ue.is_empty() && self.direct.is_empty() {
            return Err(Error::EmptyPathSet);
        }
        if self.ap_ris.is_empty() || self.ris_ue.is_empty() {
            return Err(Error::InvalidArgument(
                "AP→RIS and RIS→UE path groups must be non-empty".into(),
            ));
        }
        let nonneg = |x: T| x.is_finite() && x >= T::zero();
        let ok = self.ap_ris.iter().all(|p| nonneg(p.delay_s) && nonneg(p.gain))
            && self.ris_ue.iter().all(|p| nonneg(p.delay_s) && nonneg(p.gain))
            && self.direct.iter().all(|p| nonneg(p.delay_s) && nonneg(p.gain));
        if !ok {
            return Err(Error::InvalidArgument(
                "path delays and gains must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Delays of every AP→RIS→UE cascade pair.
    pub fn cascade_delays(&self) -> impl Iterator<Item = T> + '_ {
        self.ap_ris
            .iter()
            .flat_map(move |a| self.ris_ue.iter().map(move |b| a.delay_s + b.delay_s))
    }

    /// Re-draws the NLOS delays around their current values with a uniform
    /// jitter of at most `jitter_s`. LOS paths and all gains are kept.
    pub fn perturbed<R: Rng + ?Sized>(&self, jitter_s: T, rng: &mut R) -> Self {
        let mut out = self.clone();
        let j = jitter_s.to_f64_lossy();
        let mut jitter = |d: T| -> T {
            let dj = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            (d + T::lit(dj)).max(T::zero())
        };
        for p in out.ap_ris.iter_mut().filter(|p| !p.los) {
            p.delay_s = jitter(p.delay_s);
        }
        for p in out.ris_ue.iter_mut().filter(|p| !p.los) {
            p.delay_s = jitter(p.delay_s);
        }
        for p in out.direct.iter_mut() {
            p.delay_s = jitter(p.delay_s);
        }
        out
    }
}

/// Statistical profile for the paths not fixed by the geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProfile<T> {
    /// Total paths in the AP→RIS group, LOS included.
    pub n_ap_ris: usize,
    /// Total paths in the RIS→UE group, LOS included.
    pub n_ris_ue: usize,
    /// NLOS paths of the direct link (0 blocks it).
    pub n_direct: usize,
    /// Share of a LOS-dominated group's gain carried by its LOS path.
    pub los_fraction: T,
    /// NLOS excess delays are uniform in `[0, delay_spread_s]`.
    pub delay_spread_s: T,
    /// Decay constant of the exponential power-delay profile.
    pub pdp_decay_s: T,
    pub pathloss_exp_los: T,
    pub pathloss_exp_nlos: T,
    /// NLOS elevations at the RIS are uniform in `[-max, max]`.
    pub nlos_elevation_max: T,
    /// Delay jitter between adjacent correlated realizations.
    pub sequence_jitter_s: T,
}

impl<T: Real> Default for PathProfile<T> {
    fn default() -> Self {
        Self {
            n_ap_ris: 2,
            n_ris_ue: 2,
            n_direct: 3,
            los_fraction: T::lit(0.9),
            delay_spread_s: T::lit(300e-9),
            pdp_decay_s: T::lit(100e-9),
            pathloss_exp_los: T::lit(2.0),
            pathloss_exp_nlos: T::lit(5.6),
            nlos_elevation_max: T::lit(std::f64::consts::FRAC_PI_6),
            sequence_jitter_s: T::lit(1e-9),
        }
    }
}

/// Physical scenario: the single source of geometry, band and budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub carrier_hz: T,
    pub bandwidth_hz: T,
    pub n_subcarriers: usize,
    pub grid: RisGrid<T>,
    pub ap_pos: Vec3<T>,
    pub ris_pos: Vec3<T>,
    pub ue_pos: Vec3<T>,
    pub ue_speed: T,
    pub ue_heading: Vec3<T>,
    pub block_duration_s: T,
    pub n_blocks: usize,
    /// AWGN power density `N0` (W/Hz).
    pub noise_density: T,
    /// Transmit power budget per block (W).
    pub power_budget: T,
    pub rng_seed: u64,
    pub guard_taps: usize,
    pub profile: PathProfile<T>,
}

impl<T: Real> Default for Scenario<T> {
    fn default() -> Self {
        Self {
            carrier_hz: T::lit(3.5e9),
            bandwidth_hz: T::lit(10.5e6),
            n_subcarriers: 256,
            grid: RisGrid {
                n_rows: 10,
                n_cols: 10,
                d_h: T::lit(0.0428),
                d_v: T::lit(0.0428),
            },
            ap_pos: [T::lit(15.0), T::lit(-15.0), T::lit(6.0)],
            ris_pos: [T::zero(), T::zero(), T::lit(3.0)],
            ue_pos: [T::lit(4.0), T::lit(3.0), T::lit(1.5)],
            ue_speed: T::zero(),
            ue_heading: [T::zero(), T::one(), T::zero()],
            block_duration_s: T::lit(300e-6),
            n_blocks: 1,
            noise_density: T::lit(1e-20),
            power_budget: T::one(),
            rng_seed: 1,
            guard_taps: 4,
            profile: PathProfile::default(),
        }
    }
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: T| {
            if x.is_finite() && x > T::zero() {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!("{name} must be positive, got {x}")))
            }
        };
        positive("carrier_hz", self.carrier_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("block_duration_s", self.block_duration_s)?;
        positive("noise_density", self.noise_density)?;
        positive("power_budget", self.power_budget)?;
        if self.n_subcarriers == 0 {
            return Err(Error::InvalidScenario("n_subcarriers must be at least 1".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidScenario("n_blocks must be at least 1".into()));
        }
        if !(self.ue_speed.is_finite() && self.ue_speed >= T::zero()) {
            return Err(Error::InvalidScenario(format!(
                "ue_speed must be non-negative, got {}",
                self.ue_speed
            )));
        }
        let p = &self.profile;
        if p.n_ap_ris == 0 || p.n_ris_ue == 0 {
            return Err(Error::InvalidScenario(
                "n_ap_ris and n_ris_ue must be at least 1".into(),
            ));
        }
        if !(p.los_fraction > T::zero() && p.los_fraction <= T::one()) {
            return Err(Error::InvalidScenario(format!(
                "los_fraction must be in (0, 1], got {}",
                p.los_fraction
            )));
        }
        self.grid.validate()
    }

    pub fn n_reflectors(&self) -> usize {
        self.grid.len()
    }

    /// Maximum Doppler `v·f_c/c`.
    pub fn max_doppler_hz(&self) -> T {
        self.ue_speed * self.carrier_hz / T::lit(SPEED_OF_LIGHT)
    }

    /// Path set drawn with this scenario's own seed.
    pub fn path_set(&self) -> Result<PathSet<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        derive_geometry(self, &mut rng)
    }
}

/// `λ = c / f_c`.
pub fn wavelength<T: Real>(scenario: &Scenario<T>) -> Result<T> {
    wavelength_for(scenario.carrier_hz)
}

pub fn wavelength_for<T: Real>(carrier_hz: T) -> Result<T> {
    if !(carrier_hz.is_finite() && carrier_hz > T::zero()) {
        return Err(Error::InvalidScenario(format!(
            "carrier frequency must be positive, got {carrier_hz}"
        )));
    }
    Ok(T::lit(SPEED_OF_LIGHT) / carrier_hz)
}

/// Element positions as a `3 × N` matrix. Column `n` is
/// `[0, d_h·(n mod n_rows), d_v·⌊n / n_rows⌋]`.
pub fn element_offsets<T: Real>(grid: &RisGrid<T>) -> Array2<T> {
    let n = grid.len();
    Array2::from_shape_fn((3, n), |(axis, idx)| match axis {
        0 => T::zero(),
        1 => grid.d_h * T::count(idx % grid.n_rows),
        _ => grid.d_v * T::count(idx / grid.n_rows),
    })
}

/// Wave vector `(-2π/λ)·[cos φ cos ϕ, sin φ cos ϕ, sin ϕ]`.
pub fn wave_vector<T: Real>(angles: &PathAngles<T>, lambda: T) -> Vec3<T> {
    let k = -T::TAU() / lambda;
    let u = angles.unit_vector();
    [k * u[0], k * u[1], k * u[2]]
}

/// Per-element phase response `e^{j Φᵀ Ψ}` of the surface for one path.
pub fn array_response<T: Real>(
    grid: &RisGrid<T>,
    angles: &PathAngles<T>,
    lambda: T,
) -> Vec<Complex<T>> {
    let k = wave_vector(angles, lambda);
    let offsets = element_offsets(grid);
    offsets
        .columns()
        .into_iter()
        .map(|col| {
            let phase = k[0] * col[0] + k[1] * col[1] + k[2] * col[2];
            Complex::from_polar(T::one(), phase)
        })
        .collect()
}

/// Doppler shift seen by a receiver moving at `speed` along `heading`, for a
/// wave arriving from `source_direction` (unit vector pointing from the
/// receiver towards the source). Positive when moving towards the source.
pub fn doppler_frequency<T: Real>(
    speed: T,
    heading: Vec3<T>,
    source_direction: Vec3<T>,
    carrier_hz: T,
) -> Result<T> {
    if !(speed.is_finite() && speed >= T::zero()) {
        return Err(Error::InvalidArgument(format!("speed must be >= 0, got {speed}")));
    }
    let tol = T::epsilon().sqrt();
    for (name, v) in [("heading", heading), ("arrival direction", source_direction)] {
        let n = norm3(v);
        if !((n - T::one()).abs() <= tol) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be a unit vector, norm is {n}"
            )));
        }
    }
    Ok(speed * carrier_hz / T::lit(SPEED_OF_LIGHT) * dot3(heading, source_direction))
}

/// Free-space loss at `distance` with an extra `d^{-(γ-2)}` decay.
pub fn pathloss<T: Real>(lambda: T, distance: T, exponent: T) -> T {
    let fs = lambda / (T::lit(4.0) * T::PI() * distance);
    fs * fs * distance.powf(-(exponent - T::lit(2.0)))
}

/// Derives the LOS paths from the positions and draws the NLOS paths from the
/// scenario's statistical profile.
///
/// The random stream consumed does not depend on the UE speed, so a mobile
/// scenario at `v = 0` yields the same paths as its stationary twin.
pub fn derive_geometry<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    rng: &mut R,
) -> Result<PathSet<T>> {
    scenario.validate()?;
    let lambda = wavelength(scenario)?;
    let c = T::lit(SPEED_OF_LIGHT);
    let p = &scenario.profile;

    let ap_to_ris = sub3(scenario.ap_pos, scenario.ris_pos);
    let ue_to_ris = sub3(scenario.ue_pos, scenario.ris_pos);
    let ap_to_ue = sub3(scenario.ap_pos, scenario.ue_pos);
    let d_ar = norm3(ap_to_ris);
    let d_ru = norm3(ue_to_ris);
    let d_au = norm3(ap_to_ue);
    let eps = T::lit(1e-9);
    for (name, d) in [("AP-RIS", d_ar), ("RIS-UE", d_ru), ("AP-UE", d_au)] {
        if !(d > eps) {
            return Err(Error::DegenerateGeometry(format!("{name} positions coincide")));
        }
    }

    let heading = if scenario.ue_speed > T::zero() {
        normalize3(scenario.ue_heading)
            .ok_or_else(|| Error::InvalidScenario("ue_heading must be nonzero".into()))?
    } else {
        [T::one(), T::zero(), T::zero()]
    };
    let doppler_towards = |dir: Vec3<T>| -> Result<T> {
        doppler_frequency(scenario.ue_speed, heading, dir, scenario.carrier_hz)
    };

    // AP -> RIS
    let los_a = d_ar / c;
    let total_a = pathloss(lambda, d_ar, p.pathloss_exp_los);
    let nlos_a = draw_nlos_delays(rng, los_a, p, p.n_ap_ris - 1);
    let gains_a = split_group_gain(total_a, p.los_fraction, los_a, &nlos_a, p.pdp_decay_s);
    let mut ap_ris = vec![ApRisPath {
        delay_s: los_a,
        gain: gains_a.0,
        angles: PathAngles::from_direction(ap_to_ris)?,
        los: true,
    }];
    for (delay, gain) in nlos_a.iter().zip(gains_a.1) {
        ap_ris.push(ApRisPath {
            delay_s: *delay,
            gain,
            angles: draw_nlos_angles(rng, p)?,
            los: false,
        });
    }

    // RIS -> UE
    let los_b = d_ru / c;
    let total_b = pathloss(lambda, d_ru, p.pathloss_exp_los);
    let nlos_b = draw_nlos_delays(rng, los_b, p, p.n_ris_ue - 1);
    let gains_b = split_group_gain(total_b, p.los_fraction, los_b, &nlos_b, p.pdp_decay_s);
    let ris_from_ue = normalize3(neg3(ue_to_ris)).expect("nonzero RIS-UE distance");
    let mut ris_ue = vec![RisUePath {
        delay_s: los_b,
        gain: gains_b.0,
        angles: PathAngles::from_direction(ue_to_ris)?,
        doppler_hz: doppler_towards(ris_from_ue)?,
        los: true,
    }];
    for (delay, gain) in nlos_b.iter().zip(gains_b.1) {
        let angles = draw_nlos_angles(rng, p)?;
        // scattered arrivals reach the UE from a random horizontal bearing
        let bearing: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let arrival = [T::lit(bearing.cos()), T::lit(bearing.sin()), T::zero()];
        let arrival = normalize3(arrival).expect("unit bearing");
        ris_ue.push(RisUePath {
            delay_s: *delay,
            gain,
            angles,
            doppler_hz: doppler_towards(arrival)?,
            los: false,
        });
    }

    // AP -> UE, NLOS only, one Doppler from the LOS bearing
    let ap_from_ue = normalize3(ap_to_ue).expect("nonzero AP-UE distance");
    let direct_doppler = doppler_towards(ap_from_ue)?;
    let los_d = d_au / c;
    // the earliest component arrives at the geometric delay, which no cascade
    // can beat, so the direct delay reference stays causal for every path
    let mut nlos_d = draw_nlos_delays(rng, los_d, p, p.n_direct.saturating_sub(1));
    if p.n_direct > 0 {
        nlos_d.insert(0, los_d);
    }
    let total_d = pathloss(lambda, d_au, p.pathloss_exp_nlos);
    let weights = pdp_weights(los_d, &nlos_d, p.pdp_decay_s);
    let direct = nlos_d
        .iter()
        .zip(weights)
        .map(|(&delay_s, w)| DirectPath {
            delay_s,
            gain: total_d * w,
            doppler_hz: direct_doppler,
        })
        .collect();

    let paths = PathSet {
        ap_ris,
        ris_ue,
        direct,
    };
    paths.validate()?;
    Ok(paths)
}

fn draw_nlos_delays<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    los_delay: T,
    profile: &PathProfile<T>,
    count: usize,
) -> Vec<T> {
    let spread = profile.delay_spread_s.to_f64_lossy().max(0.0);
    (0..count)
        .map(|_| {
            let excess = if spread > 0.0 { rng.random_range(0.0..=spread) } else { 0.0 };
            los_delay + T::lit(excess)
        })
        .collect()
}

fn draw_nlos_angles<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    profile: &PathProfile<T>,
) -> Result<PathAngles<T>> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let az = rng.random_range(-half_pi..=half_pi);
    let el_max = profile
        .nlos_elevation_max
        .to_f64_lossy()
        .clamp(0.0, half_pi);
    let el = if el_max > 0.0 { rng.random_range(-el_max..=el_max) } else { 0.0 };
    PathAngles::new(T::lit(az), T::lit(el))
}

/// Exponential power-delay weights, normalized to sum to one.
fn pdp_weights<T: Real>(reference: T, delays: &[T], decay: T) -> Vec<T> {
    if delays.is_empty() {
        return Vec::new();
    }
    let raw: Vec<T> = delays
        .iter()
        .map(|&d| {
            if decay > T::zero() {
                (-(d - reference) / decay).exp()
            } else {
                T::one()
            }
        })
        .collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Splits `total` between the LOS path and the NLOS paths of one group.
fn split_group_gain<T: Real>(
    total: T,
    los_fraction: T,
    los_delay: T,
    nlos_delays: &[T],
    decay: T,
) -> (T, Vec<T>) {
    if nlos_delays.is_empty() {
        return (total, Vec::new());
    }
    let nlos_total = total * (T::one() - los_fraction);
    let w = pdp_weights(los_delay, nlos_delays, decay);
    (
        total * los_fraction,
        w.into_iter().map(|w| nlos_total * w).collect(),
    )
}

pub(crate) fn dot3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3<T: Real>(a: Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

fn sub3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn neg3<T: Real>(a: Vec3<T>) -> Vec3<T> {
    [-a[0], -a[1], -a[2]]
}

fn normalize3<T: Real>(a: Vec3<T>) -> Option<Vec3<T>> {
    let n = norm3(a);
    (n > T::zero()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}
