use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Angular increment between consecutive spokes, in degrees.
pub fn golden_angle_deg() -> f64 {
    180.0 * (5f64.sqrt() - 1.0) / 2.0
}

/// Radial k-space sample coordinates for every frame, in cycles/pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    nx: usize,
    spokes: usize,
    readout: usize,
    /// Spoke angles in degrees, one row of `spokes` entries per frame.
    angles: Vec<f64>,
    frames: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    /// Builds a trajectory from explicit spoke angles (degrees), `spokes`
    /// per frame.
    pub fn from_angles(nx: usize, spokes: usize, angles: Vec<f64>) -> Result<Self> {
        if nx < 4 {
            return Err(Error::InvalidArgument(format!("trajectory needs nx >= 4, got {nx}")));
        }
        if spokes == 0 || angles.is_empty() || !angles.len().is_multiple_of(spokes) {
            return Err(Error::InvalidArgument(format!(
                "{} angles cannot be split into frames of {spokes} spokes",
                angles.len()
            )));
        }
        let readout = 2 * nx;
        let dk = 1.0 / readout as f64;
        let frames = angles
            .chunks(spokes)
            .map(|frame| {
                let mut coords = Vec::with_capacity(spokes * readout);
                for &deg in frame {
                    let (s, c) = (deg * PI / 180.0).sin_cos();
                    for m in 0..readout {
                        let kappa = -0.5 + m as f64 * dk;
                        coords.push([kappa * c, kappa * s]);
                    }
                }
                coords
            })
            .collect();
        Ok(Self {
            nx,
            spokes,
            readout,
            angles,
            frames,
        })
    }

    /// Builds a trajectory from raw per-frame coordinates, e.g. one read back
    /// from disk. Spoke angles are recovered from the outermost sample.
    pub fn from_coords(nx: usize, spokes: usize, frames: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let readout = 2 * nx;
        let mut angles = Vec::with_capacity(frames.len() * spokes);
        for f in &frames {
            if f.len() != spokes * readout {
                return Err(Error::InvalidArgument(format!(
                    "frame has {} samples, expected {}",
                    f.len(),
                    spokes * readout
                )));
            }
            for spoke in f.chunks(readout) {
                // first sample sits at kappa = -0.5
                let [kx, ky] = spoke[0];
                angles.push((-ky).atan2(-kx).to_degrees().rem_euclid(180.0));
            }
        }
        for c in frames.iter().flatten() {
            check_coordinate(*c)?;
        }
        Ok(Self {
            nx,
            spokes,
            readout,
            angles,
            frames,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn spokes(&self) -> usize {
        self.spokes
    }

    pub fn readout(&self) -> usize {
        self.readout
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn samples_per_frame(&self) -> usize {
        self.spokes * self.readout
    }

    pub fn frame(&self, t: usize) -> &[[f64; 2]] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<[f64; 2]>] {
        &self.frames
    }

    /// Spoke angle in degrees for spoke `s` of frame `t`.
    pub fn angle(&self, t: usize, s: usize) -> f64 {
        self.angles[t * self.spokes + s]
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Returns the trajectory with every spoke rotated by `deg` degrees.
    pub fn rotated(&self, deg: f64) -> Self {
        let angles = self.angles.iter().map(|a| (a + deg).rem_euclid(180.0)).collect();
        Self::from_angles(self.nx, self.spokes, angles).expect("rotation preserves validity")
    }
}

pub(crate) fn check_coordinate([kx, ky]: [f64; 2]) -> Result<()> {
    let ok = |k: f64| (-0.5..0.5).contains(&k);
    if !ok(kx) || !ok(ky) {
        return Err(Error::InvalidArgument(format!(
            "k-space coordinate ({kx}, {ky}) outside [-0.5, 0.5)"
        )));
    }
    Ok(())
}

/// Golden-angle radial sampling with spokes assigned to frames in
/// acquisition order: frame `t` receives global spokes
/// `t * spokes_per_frame .. (t + 1) * spokes_per_frame`.
pub fn golden_angle_trajectory(nx: usize, nt: usize, spokes_per_frame: usize) -> Result<Trajectory> {
    if nt == 0 || spokes_per_frame == 0 {
        return Err(Error::InvalidArgument(format!(
            "golden-angle trajectory needs positive frames and spokes, got nt={nt}, spokes={spokes_per_frame}"
        )));
    }
    let step = golden_angle_deg();
    let angles = (0..nt * spokes_per_frame)
        .map(|n| (n as f64 * step).rem_euclid(180.0))
        .collect();
    Trajectory::from_angles(nx, spokes_per_frame, angles)
}

/// Number of spokes needed to sample an `nx`-wide image at the Nyquist limit.
pub fn nyquist_spokes(nx: usize) -> usize {
    (PI / 2.0 * nx as f64).ceil() as usize
}

pub fn acceleration_factor(nx: usize, spokes_per_frame: usize) -> f64 {
    nyquist_spokes(nx) as f64 / spokes_per_frame as f64
}

/// Per-sample density compensation weights, one vector per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights {
    frames: Vec<Vec<f64>>,
}

impl DensityWeights {
    pub fn from_frames(frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.iter().flatten().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("density weights must be positive and finite".into()));
        }
        Ok(Self { frames })
    }

    pub fn uniform(samples_per_frame: &[usize]) -> Self {
        Self {
            frames: samples_per_frame.iter().map(|&n| vec![1.0; n]).collect(),
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Multiplies every weight by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_frames(
            self.frames
                .iter()
                .map(|f| f.iter().map(|w| w * c).collect())
                .collect(),
        )
    }
}

/// Ramp compensation `max(|k|, dk/2)`, normalized to a per-frame maximum of 1.
pub fn ramp_density_weights(traj: &Trajectory) -> DensityWeights {
    let floor = 0.5 / traj.readout() as f64;
    let frames = traj
        .frames()
        .iter()
        .map(|coords| {
            let raw: Vec<f64> = coords
                .iter()
                .map(|[kx, ky]| kx.hypot(*ky).max(floor))
                .collect();
            let max = raw.iter().copied().fold(0.0, f64::max);
            raw.into_iter().map(|w| w / max).collect()
        })
        .collect();
    DensityWeights { frames }
}
