//! Room topology and random-waypoint mobility.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{LiFiRadioParams, WiFiRadioParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApKind {
    LiFi,
    WiFi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApDescriptor {
    pub kind: ApKind,
    pub position: Point3,
    /// Hz.
    pub bandwidth: f64,
}

/// Room geometry, the AP roster and the radio parameters shared by each AP kind.
///
/// AP index `i` is the position in [`NetworkTopology::aps`]. Topologies built by
/// [`build_topology`] put the WiFi AP first and the LiFi grid after it in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub room_length: f64,
    pub room_width: f64,
    pub room_height: f64,
    aps: Vec<ApDescriptor>,
    pub lifi_params: LiFiRadioParams,
    pub wifi_params: WiFiRadioParams,
}

impl NetworkTopology {
    /// Validates and assembles a topology from an explicit AP roster.
    pub fn new(
        room: (f64, f64, f64),
        aps: Vec<ApDescriptor>,
        lifi_params: LiFiRadioParams,
        wifi_params: WiFiRadioParams,
    ) -> Result<Self> {
        let (l, w, h) = room;
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(Error::Config(format!("room dimensions must be positive, got {l}x{w}x{h}")));
        }
        let n_wifi = aps.iter().filter(|ap| ap.kind == ApKind::WiFi).count();
        if n_wifi != 1 {
            return Err(Error::Config(format!("exactly one WiFi AP required, found {n_wifi}")));
        }
        for (i, ap) in aps.iter().enumerate() {
            let p = ap.position;
            if !(0.0..=l).contains(&p.x) || !(0.0..=w).contains(&p.y) || !(0.0..=h).contains(&p.z) {
                return Err(Error::Config(format!(
                    "AP {} at ({}, {}, {}) lies outside the {l}x{w}x{h} room",
                    i + 1,
                    p.x,
                    p.y,
                    p.z
                )));
            }
            if !(ap.bandwidth > 0.0) {
                return Err(Error::Config(format!("AP {} bandwidth must be positive", i + 1)));
            }
        }
        lifi_params.validate()?;
        wifi_params.validate()?;
        Ok(Self {
            room_length: l,
            room_width: w,
            room_height: h,
            aps,
            lifi_params,
            wifi_params,
        })
    }

    pub fn aps(&self) -> &[ApDescriptor] {
        &self.aps
    }

    pub fn n_aps(&self) -> usize {
        self.aps.len()
    }

    pub fn wifi_index(&self) -> usize {
        self.aps
            .iter()
            .position(|ap| ap.kind == ApKind::WiFi)
            .expect("topology invariant: one WiFi AP")
    }

    pub fn lifi_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.aps
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.kind == ApKind::LiFi)
            .map(|(i, _)| i)
    }

    pub fn contains_footprint(&self, x: f64, y: f64) -> bool {
        (0.0..=self.room_length).contains(&x) && (0.0..=self.room_width).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub room_length: f64,
    pub room_width: f64,
    pub room_height: f64,
    /// The LiFi grid is `lifi_grid x lifi_grid`.
    pub lifi_grid: usize,
    pub lifi_separation: f64,
    /// Defaults to `(L/2, W/2, 1.0)` when absent.
    pub wifi_position: Option<Point3>,
    pub lifi: LiFiRadioParams,
    pub wifi: WiFiRadioParams,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            room_length: 10.0,
            room_width: 10.0,
            room_height: 3.0,
            lifi_grid: 4,
            lifi_separation: 2.5,
            wifi_position: None,
            lifi: LiFiRadioParams::default(),
            wifi: WiFiRadioParams::default(),
        }
    }
}

pub const DEFAULT_WIFI_HEIGHT: f64 = 1.0;

/// Lays out the centered ceiling grid of LiFi APs plus the single WiFi AP.
pub fn build_topology(config: &TopologyConfig) -> Result<NetworkTopology> {
    let n = config.lifi_grid;
    if n == 0 {
        return Err(Error::Config("lifi_grid must be at least 1".into()));
    }
    if !(config.lifi_separation > 0.0) {
        return Err(Error::Config("lifi_separation must be positive".into()));
    }
    let span = (n - 1) as f64 * config.lifi_separation;
    let off_x = (config.room_length - span) / 2.0;
    let off_y = (config.room_width - span) / 2.0;
    if off_x < 0.0 || off_y < 0.0 {
        return Err(Error::Config(format!(
            "a {n}x{n} LiFi grid with {} m separation spans {span} m and does not fit the {}x{} m room",
            config.lifi_separation, config.room_length, config.room_width
        )));
    }
    let wifi_pos = config.wifi_position.unwrap_or(Point3::new(
        config.room_length / 2.0,
        config.room_width / 2.0,
        DEFAULT_WIFI_HEIGHT,
    ));
    let mut aps = Vec::with_capacity(n * n + 1);
    aps.push(ApDescriptor {
        kind: ApKind::WiFi,
        position: wifi_pos,
        bandwidth: config.wifi.bandwidth,
    });
    for row in 0..n {
        for col in 0..n {
            aps.push(ApDescriptor {
                kind: ApKind::LiFi,
                position: Point3::new(
                    off_x + col as f64 * config.lifi_separation,
                    off_y + row as f64 * config.lifi_separation,
                    config.room_height,
                ),
                bandwidth: config.lifi.bandwidth,
            });
        }
    }
    NetworkTopology::new(
        (config.room_length, config.room_width, config.room_height),
        aps,
        config.lifi.clone(),
        config.wifi.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub v_min: f64,
    pub v_max: f64,
    /// Sampling period `T_s`, seconds.
    pub sample_period: f64,
    /// Simulation period `T`, seconds.
    pub duration: f64,
    pub ue_height: f64,
    pub seed: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            v_min: 0.5,
            v_max: 5.0,
            sample_period: 0.1,
            duration: 500.0,
            ue_height: 0.5,
            seed: 1,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_min <= self.v_max) {
            return Err(Error::Config(format!(
                "speed range must satisfy 0 < v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if !(self.sample_period > 0.0 && self.sample_period <= self.duration) {
            return Err(Error::Config(format!(
                "periods must satisfy 0 < T_s <= T, got T_s = {}, T = {}",
                self.sample_period, self.duration
            )));
        }
        if !(self.ue_height >= 0.0) {
            return Err(Error::Config("ue_height must be non-negative".into()));
        }
        Ok(())
    }

    /// `floor(T / T_s)`, tolerant of the representation error in e.g. `500 / 0.1`.
    pub fn n_samples(&self) -> usize {
        (self.duration / self.sample_period + 1e-9).floor() as usize
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Point3,
    pub waypoint: [f64; 2],
    pub speed: f64,
}

fn uniform_point<R: Rng + ?Sized>(topology: &NetworkTopology, rng: &mut R) -> [f64; 2] {
    [
        rng.random::<f64>() * topology.room_length,
        rng.random::<f64>() * topology.room_width,
    ]
}

fn uniform_speed<R: Rng + ?Sized>(mobility: &MobilityConfig, rng: &mut R) -> f64 {
    mobility.v_min + rng.random::<f64>() * (mobility.v_max - mobility.v_min)
}

/// Draws `n_ue` users uniformly over the footprint, each with an RWP waypoint and speed.
pub fn init_ues<R: Rng + ?Sized>(
    topology: &NetworkTopology,
    n_ue: usize,
    mobility: &MobilityConfig,
    rng: &mut R,
) -> Result<Vec<UeState>> {
    if n_ue == 0 {
        return Err(Error::InvalidInput("at least one UE is required".into()));
    }
    mobility.validate()?;
    Ok((0..n_ue)
        .map(|_| {
            let [x, y] = uniform_point(topology, rng);
            UeState {
                position: Point3::new(x, y, mobility.ue_height),
                waypoint: uniform_point(topology, rng),
                speed: uniform_speed(mobility, rng),
            }
        })
        .collect())
}

/// Advances one UE by one sampling period. No pause time: on arrival the UE
/// immediately draws a fresh waypoint and speed.
pub fn rwp_step<R: Rng + ?Sized>(
    ue: &UeState,
    topology: &NetworkTopology,
    mobility: &MobilityConfig,
    rng: &mut R,
) -> UeState {
    let step = ue.speed * mobility.sample_period;
    let dx = ue.waypoint[0] - ue.position.x;
    let dy = ue.waypoint[1] - ue.position.y;
    let remaining = (dx * dx + dy * dy).sqrt();
    if remaining <= step {
        UeState {
            position: Point3::new(ue.waypoint[0], ue.waypoint[1], ue.position.z),
            waypoint: uniform_point(topology, rng),
            speed: uniform_speed(mobility, rng),
        }
    } else {
        let f = step / remaining;
        UeState {
            position: Point3::new(ue.position.x + f * dx, ue.position.y + f * dy, ue.position.z),
            ..*ue
        }
    }
}

/// Runs one RWP episode and returns the UE positions at every sampling instant
/// (`n_samples()` snapshots, the first being the initial drop).
pub fn simulate_positions(
    topology: &NetworkTopology,
    n_ue: usize,
    mobility: &MobilityConfig,
) -> Result<Vec<Vec<Point3>>> {
    let mut rng = mobility.rng();
    let mut ues = init_ues(topology, n_ue, mobility, &mut rng)?;
    let n = mobility.n_samples();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        out.push(ues.iter().map(|u| u.position).collect());
        if t + 1 < n {
            ues = ues
                .iter()
                .map(|u| rwp_step(u, topology, mobility, &mut rng))
                .collect();
        }
    }
    Ok(out)
}
