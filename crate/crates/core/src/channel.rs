//! LiFi and WiFi channel models, SINR, and link capacity.
//!
//! LiFi links use the Lambertian line-of-sight gain plus an optional
//! first-order wall reflection term, converted to electrical SNR as
//! `(R * P_opt * H)^2 / (N0 * B)`. WiFi links use free-space path loss up to a
//! breakpoint distance and a steeper exponent beyond it. There is no fading.

use std::f64::consts::{E, PI};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::env::{ApDescriptor, ApKind, NetworkTopology, Point3};
use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceMode {
    /// Parallel LiFi links on distinct wavelengths; no inter-AP interference.
    WdmOrthogonal,
    /// All LiFi APs share one band; other APs' LoS power counts as interference.
    CoChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiFiRadioParams {
    /// Hz.
    pub bandwidth: f64,
    /// W.
    pub optical_tx_power: f64,
    /// Degrees.
    pub half_intensity_angle: f64,
    /// m².
    pub pd_area: f64,
    /// Degrees.
    pub fov: f64,
    /// A/W.
    pub responsivity: f64,
    pub filter_gain: f64,
    pub concentrator_index: f64,
    /// A²/Hz.
    pub noise_psd: f64,
    pub wall_reflectivity: f64,
    pub nlos_enabled: bool,
    /// m.
    pub nlos_grid_resolution: f64,
    pub interference_mode: InterferenceMode,
}

impl Default for LiFiRadioParams {
    fn default() -> Self {
        Self {
            bandwidth: 20e6,
            optical_tx_power: 3.0,
            half_intensity_angle: 60.0,
            pd_area: 1e-4,
            fov: 80.0,
            responsivity: 0.53,
            filter_gain: 1.0,
            concentrator_index: 1.5,
            noise_psd: 1e-21,
            wall_reflectivity: 0.8,
            nlos_enabled: false,
            nlos_grid_resolution: 0.25,
            interference_mode: InterferenceMode::WdmOrthogonal,
        }
    }
}

impl LiFiRadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lifi.bandwidth", self.bandwidth),
            ("lifi.optical_tx_power", self.optical_tx_power),
            ("lifi.half_intensity_angle", self.half_intensity_angle),
            ("lifi.pd_area", self.pd_area),
            ("lifi.fov", self.fov),
            ("lifi.responsivity", self.responsivity),
            ("lifi.filter_gain", self.filter_gain),
            ("lifi.concentrator_index", self.concentrator_index),
            ("lifi.noise_psd", self.noise_psd),
            ("lifi.nlos_grid_resolution", self.nlos_grid_resolution),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.fov > 90.0 {
            return Err(Error::Config(format!("lifi.fov must be in (0, 90] degrees, got {}", self.fov)));
        }
        if self.half_intensity_angle >= 90.0 {
            return Err(Error::Config("lifi.half_intensity_angle must be below 90 degrees".into()));
        }
        if !(0.0..=1.0).contains(&self.wall_reflectivity) {
            return Err(Error::Config(format!(
                "lifi.wall_reflectivity must be in [0, 1], got {}",
                self.wall_reflectivity
            )));
        }
        Ok(())
    }

    /// `m = -ln 2 / ln cos(half-intensity angle)`.
    pub fn lambertian_order(&self) -> f64 {
        -(2f64.ln()) / self.half_intensity_angle.to_radians().cos().ln()
    }

    /// Concentrator gain for an incidence angle inside the FOV.
    fn concentrator_gain(&self) -> f64 {
        let n = self.concentrator_index;
        n * n / self.fov.to_radians().sin().powi(2)
    }

    fn cos_fov(&self) -> f64 {
        self.fov.to_radians().cos()
    }

    fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WiFiRadioParams {
    /// Hz.
    pub bandwidth: f64,
    pub tx_power_dbm: f64,
    /// Hz.
    pub carrier_freq: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// m.
    pub breakpoint_distance: f64,
    pub pathloss_exponent_after_bp: f64,
}

impl Default for WiFiRadioParams {
    fn default() -> Self {
        Self {
            bandwidth: 20e6,
            tx_power_dbm: 20.0,
            carrier_freq: 2.4e9,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 10.0,
            breakpoint_distance: 10.0,
            pathloss_exponent_after_bp: 3.5,
        }
    }
}

impl WiFiRadioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config("wifi.bandwidth must be positive".into()));
        }
        if !(self.carrier_freq > 0.0) {
            return Err(Error::Config("wifi.carrier_freq must be positive".into()));
        }
        if !(self.breakpoint_distance > 0.0) {
            return Err(Error::Config("wifi.breakpoint_distance must be positive".into()));
        }
        if !(self.pathloss_exponent_after_bp >= 2.0) {
            return Err(Error::Config("wifi.pathloss_exponent_after_bp must be >= 2".into()));
        }
        Ok(())
    }

    /// Path loss in dB at distance `d` metres.
    pub fn path_loss_db(&self, d: f64) -> f64 {
        if d <= self.breakpoint_distance {
            fspl_db(d, self.carrier_freq)
        } else {
            fspl_db(self.breakpoint_distance, self.carrier_freq)
                + 10.0 * self.pathloss_exponent_after_bp * (d / self.breakpoint_distance).log10()
        }
    }
}

/// Free-space path loss `20 log10(4 pi d f / c)` in dB.
pub fn fspl_db(d: f64, freq: f64) -> f64 {
    20.0 * (4.0 * PI * d * freq / SPEED_OF_LIGHT).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Line-of-sight DC gain of a downward-facing LED and an upward-facing photodiode.
///
/// Returns 0 when the incidence angle exceeds the FOV or the AP is not above
/// the receiver plane.
pub fn lifi_los_gain(ap: Point3, ue: Point3, params: &LiFiRadioParams) -> Result<f64> {
    let d = ap.distance(&ue);
    if d == 0.0 {
        return Err(Error::InvalidInput("AP and UE are co-located".into()));
    }
    let cos_angle = (ap.z - ue.z) / d;
    if cos_angle <= 0.0 || cos_angle < params.cos_fov() {
        return Ok(0.0);
    }
    let m = params.lambertian_order();
    Ok((m + 1.0) * params.pd_area / (2.0 * PI * d * d)
        * cos_angle.powf(m)
        * params.filter_gain
        * params.concentrator_gain()
        * cos_angle)
}

/// First-order reflection gain from the four side walls, integrated by the
/// midpoint rule over square-ish elements of side `nlos_grid_resolution`.
pub fn lifi_nlos_gain(ap: Point3, ue: Point3, topology: &NetworkTopology, params: &LiFiRadioParams) -> f64 {
    if params.wall_reflectivity == 0.0 {
        return 0.0;
    }
    let (l, w, h) = (topology.room_length, topology.room_width, topology.room_height);
    let m = params.lambertian_order();
    let cos_fov = params.cos_fov();
    let prefactor = (m + 1.0) * params.pd_area * params.wall_reflectivity * params.filter_gain
        * params.concentrator_gain()
        / (2.0 * PI * PI);
    let res = params.nlos_grid_resolution;
    let nz = (h / res).ceil().max(1.0) as usize;
    let dz = h / nz as f64;

    // (fixed coordinate, axis along the wall, wall length, inward normal)
    let walls: [(bool, f64, f64, [f64; 2]); 4] = [
        (true, 0.0, w, [1.0, 0.0]),
        (true, l, w, [-1.0, 0.0]),
        (false, 0.0, l, [0.0, 1.0]),
        (false, w, l, [0.0, -1.0]),
    ];

    let mut total = 0.0;
    for (x_fixed, coord, length, normal) in walls {
        let ns = (length / res).ceil().max(1.0) as usize;
        let ds = length / ns as f64;
        let area = ds * dz;
        for a in 0..ns {
            let s = (a as f64 + 0.5) * ds;
            for b in 0..nz {
                let z = (b as f64 + 0.5) * dz;
                let p = if x_fixed { Point3::new(coord, s, z) } else { Point3::new(s, coord, z) };
                let d1 = ap.distance(&p);
                let d2 = ue.distance(&p);
                if d1 == 0.0 || d2 == 0.0 {
                    continue;
                }
                let cos_emit = (ap.z - p.z) / d1;
                let cos_wall_in = (normal[0] * (ap.x - p.x) + normal[1] * (ap.y - p.y)) / d1;
                let cos_wall_out = (normal[0] * (ue.x - p.x) + normal[1] * (ue.y - p.y)) / d2;
                let cos_inc = (p.z - ue.z) / d2;
                if cos_emit <= 0.0 || cos_wall_in <= 0.0 || cos_wall_out <= 0.0 || cos_inc <= 0.0 || cos_inc < cos_fov {
                    continue;
                }
                total += area * cos_emit.powf(m) * cos_wall_in * cos_wall_out * cos_inc / (d1 * d1 * d2 * d2);
            }
        }
    }
    prefactor * total
}

/// WiFi SNR (linear) of one AP-UE link.
pub fn wifi_snr(ap: &ApDescriptor, ue: Point3, params: &WiFiRadioParams) -> f64 {
    // Clamp guards the (physically impossible) co-located case.
    let d = ap.position.distance(&ue).max(1e-3);
    let noise_dbm = params.noise_psd_dbm_hz + 10.0 * ap.bandwidth.log10() + params.noise_figure_db;
    db_to_linear(params.tx_power_dbm - params.path_loss_db(d) - noise_dbm)
}

/// Per-drop channel: `sinr[(i, j)]` and `capacity[(i, j)]` for AP `i`, UE `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub sinr: Array2<f64>,
    pub capacity: Array2<f64>,
}

impl ChannelState {
    pub fn n_aps(&self) -> usize {
        self.sinr.nrows()
    }

    pub fn n_ues(&self) -> usize {
        self.sinr.ncols()
    }
}

fn lifi_total_gain(topology: &NetworkTopology, ap: Point3, ue: Point3) -> Result<f64> {
    let p = &topology.lifi_params;
    let mut g = lifi_los_gain(ap, ue, p)?;
    if p.nlos_enabled {
        g += lifi_nlos_gain(ap, ue, topology, p);
    }
    Ok(g)
}

/// SINR of every AP-UE pair, shape `N_a x N_u`.
pub fn sinr_matrix(topology: &NetworkTopology, ues: &[Point3]) -> Result<Array2<f64>> {
    if ues.is_empty() {
        return Err(Error::InvalidInput("sinr_matrix needs at least one UE".into()));
    }
    let aps = topology.aps();
    let lifi = &topology.lifi_params;
    let amp = lifi.responsivity * lifi.optical_tx_power;
    let noise = lifi.noise_power();
    let mut sinr = Array2::<f64>::zeros((aps.len(), ues.len()));
    for (j, &ue) in ues.iter().enumerate() {
        let interference = if lifi.interference_mode == InterferenceMode::CoChannel {
            let mut per_ap = vec![0.0; aps.len()];
            for (i, ap) in aps.iter().enumerate() {
                if ap.kind == ApKind::LiFi {
                    per_ap[i] = (amp * lifi_los_gain(ap.position, ue, lifi)?).powi(2);
                }
            }
            Some(per_ap)
        } else {
            None
        };
        let total_los: f64 = interference.as_ref().map_or(0.0, |v| v.iter().sum());
        for (i, ap) in aps.iter().enumerate() {
            sinr[(i, j)] = match ap.kind {
                ApKind::WiFi => wifi_snr(ap, ue, &topology.wifi_params),
                ApKind::LiFi => {
                    let signal = (amp * lifi_total_gain(topology, ap.position, ue)?).powi(2);
                    let interf = interference.as_ref().map_or(0.0, |v| total_los - v[i]);
                    signal / (noise + interf.max(0.0))
                }
            };
        }
    }
    Ok(sinr)
}

/// Achievable rate in bit/s of a link with the given linear SINR.
pub fn link_capacity(sinr: f64, bandwidth: f64, kind: ApKind) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::InvalidInput(format!("SINR must be non-negative, got {sinr}")));
    }
    Ok(match kind {
        ApKind::LiFi => bandwidth / 2.0 * (1.0 + E / (2.0 * PI) * sinr).log2(),
        ApKind::WiFi => bandwidth * (1.0 + sinr).log2(),
    })
}

pub fn capacity_matrix(topology: &NetworkTopology, sinr: &Array2<f64>) -> Result<Array2<f64>> {
    let aps = topology.aps();
    if sinr.nrows() != aps.len() {
        return Err(Error::dim("SINR rows", aps.len(), sinr.nrows()));
    }
    let mut cap = Array2::<f64>::zeros(sinr.raw_dim());
    for ((i, j), &g) in sinr.indexed_iter() {
        cap[(i, j)] = link_capacity(g, aps[i].bandwidth, aps[i].kind)?;
    }
    Ok(cap)
}

pub fn channel_state(topology: &NetworkTopology, ues: &[Point3]) -> Result<ChannelState> {
    let sinr = sinr_matrix(topology, ues)?;
    let capacity = capacity_matrix(topology, &sinr)?;
    Ok(ChannelState { sinr, capacity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_topology, TopologyConfig};
    use approx::assert_relative_eq;

    fn example_params() -> LiFiRadioParams {
        LiFiRadioParams {
            half_intensity_angle: 60.0,
            pd_area: 1e-4,
            filter_gain: 1.0,
            concentrator_index: 1.5,
            fov: 80.0,
            ..LiFiRadioParams::default()
        }
    }

    #[test]
    fn lambertian_order_of_sixty_degrees_is_one() {
        assert_relative_eq!(example_params().lambertian_order(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn los_gain_directly_below() {
        let h = lifi_los_gain(Point3::new(0.0, 0.0, 3.0), Point3::new(0.0, 0.0, 0.5), &example_params()).unwrap();
        // (m+1) A / (2 pi d^2) * n^2 / sin^2(80 deg), m = 1, d = 2.5
        assert_relative_eq!(h, 1.181543485789366e-05, max_relative = 1e-12);
    }

    #[test]
    fn los_gain_inverse_square() {
        let p = example_params();
        let ap = Point3::new(0.0, 0.0, 5.0);
        let near = lifi_los_gain(ap, Point3::new(0.0, 0.0, 4.0), &p).unwrap();
        let far = lifi_los_gain(ap, Point3::new(0.0, 0.0, 3.0), &p).unwrap();
        assert_relative_eq!(near / far, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn los_gain_outside_fov_is_zero() {
        let p = LiFiRadioParams { fov: 30.0, ..example_params() };
        // 45 degree incidence
        let h = lifi_los_gain(Point3::new(0.0, 0.0, 2.0), Point3::new(1.0, 0.0, 1.0), &p).unwrap();
        assert_eq!(h, 0.0);
        assert!(lifi_los_gain(Point3::new(1.0, 1.0, 1.0), Point3::new(1.0, 1.0, 1.0), &p).is_err());
    }

    fn nlos_setup() -> (NetworkTopology, Point3, Point3) {
        let mut cfg = TopologyConfig::default();
        cfg.lifi.nlos_enabled = true;
        let topo = build_topology(&cfg).unwrap();
        let ap = topo.aps()[1].position;
        let ue = Point3::new(ap.x, ap.y, 0.5);
        (topo, ap, ue)
    }

    #[test]
    fn nlos_zero_reflectivity() {
        let (topo, ap, ue) = nlos_setup();
        let p = LiFiRadioParams { wall_reflectivity: 0.0, ..topo.lifi_params.clone() };
        assert_eq!(lifi_nlos_gain(ap, ue, &topo, &p), 0.0);
    }

    #[test]
    fn nlos_converges_under_refinement() {
        let (topo, ap, ue) = nlos_setup();
        let coarse = lifi_nlos_gain(ap, ue, &topo, &topo.lifi_params);
        let fine_p = LiFiRadioParams { nlos_grid_resolution: 0.125, ..topo.lifi_params.clone() };
        let fine = lifi_nlos_gain(ap, ue, &topo, &fine_p);
        assert!(coarse > 0.0);
        assert!(((coarse - fine) / fine).abs() < 0.05, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn nlos_below_los_at_room_center() {
        let (topo, _, _) = nlos_setup();
        let ue = Point3::new(5.0, 5.0, 0.5);
        for ap in topo.aps().iter().filter(|a| a.kind == ApKind::LiFi) {
            let los = lifi_los_gain(ap.position, ue, &topo.lifi_params).unwrap();
            let nlos = lifi_nlos_gain(ap.position, ue, &topo, &topo.lifi_params);
            assert!(nlos < los, "nlos {nlos} los {los}");
        }
    }

    #[test]
    fn wifi_snr_free_space_chain() {
        let params = WiFiRadioParams::default();
        let ap = ApDescriptor {
            kind: ApKind::WiFi,
            position: Point3::new(0.0, 0.0, 3.0),
            bandwidth: 20e6,
        };
        let snr_db = linear_to_db(wifi_snr(&ap, Point3::new(0.0, 0.0, 0.0), &params));
        // 20 dBm - FSPL(3 m, 2.4 GHz) - (-174 + 73.01 + 10) dBm
        assert_relative_eq!(snr_db, 61.39526689285144, epsilon = 1e-9);
        let snr6 = linear_to_db(wifi_snr(&ap, Point3::new(6.0, 0.0, 3.0), &params));
        let snr12 = linear_to_db(wifi_snr(&ap, Point3::new(12.0, 0.0, 3.0), &params));
        let snr3 = linear_to_db(wifi_snr(&ap, Point3::new(3.0, 0.0, 3.0), &params));
        assert_relative_eq!(snr3 - snr6, 20.0 * 2f64.log10(), epsilon = 1e-9);
        let snr10 = linear_to_db(wifi_snr(&ap, Point3::new(10.0, 0.0, 3.0), &params));
        let snr20 = linear_to_db(wifi_snr(&ap, Point3::new(20.0, 0.0, 3.0), &params));
        assert_relative_eq!(snr10 - snr20, 10.536049848239342, epsilon = 1e-9);
        assert!(snr6 > snr12);
    }

    #[test]
    fn capacity_formulas() {
        assert_eq!(link_capacity(0.0, 20e6, ApKind::LiFi).unwrap(), 0.0);
        assert_eq!(link_capacity(0.0, 20e6, ApKind::WiFi).unwrap(), 0.0);
        assert_relative_eq!(link_capacity(100.0, 20e6, ApKind::LiFi).unwrap(), 54680227.78172452, max_relative = 1e-12);
        assert_relative_eq!(link_capacity(31.623, 20e6, ApKind::WiFi).unwrap(), 100556351.05567266, max_relative = 1e-12);
        assert!(link_capacity(-1.0, 20e6, ApKind::WiFi).is_err());
    }

    #[test]
    fn lifi_capacity_matches_scalar_evaluation() {
        for &g in &[1e-3, 0.7, 12.0, 4.5e4] {
            let expected = 0.5 * 20e6 * (1.0 + std::f64::consts::E / std::f64::consts::TAU * g).ln() / 2f64.ln();
            assert_relative_eq!(link_capacity(g, 20e6, ApKind::LiFi).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_lifi_ap_modes_agree() {
        let mut cfg = TopologyConfig { lifi_grid: 1, ..TopologyConfig::default() };
        let ues = [Point3::new(2.0, 3.0, 0.5), Point3::new(7.0, 7.0, 0.5)];
        let wdm = sinr_matrix(&build_topology(&cfg).unwrap(), &ues).unwrap();
        cfg.lifi.interference_mode = InterferenceMode::CoChannel;
        let co = sinr_matrix(&build_topology(&cfg).unwrap(), &ues).unwrap();
        assert_eq!(wdm, co);
    }

    #[test]
    fn cochannel_never_exceeds_wdm() {
        let mut cfg = TopologyConfig::default();
        let ues = [Point3::new(2.0, 3.0, 0.5), Point3::new(5.0, 5.0, 0.5), Point3::new(9.9, 0.1, 0.5)];
        let wdm = sinr_matrix(&build_topology(&cfg).unwrap(), &ues).unwrap();
        cfg.lifi.interference_mode = InterferenceMode::CoChannel;
        let co = sinr_matrix(&build_topology(&cfg).unwrap(), &ues).unwrap();
        for (a, b) in co.iter().zip(wdm.iter()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn narrow_fov_leaves_only_wifi() {
        let cfg = TopologyConfig {
            lifi: LiFiRadioParams { fov: 5.0, ..LiFiRadioParams::default() },
            ..TopologyConfig::default()
        };
        let topo = build_topology(&cfg).unwrap();
        let ch = channel_state(&topo, &[Point3::new(0.1, 0.1, 0.5)]).unwrap();
        for i in topo.lifi_indices() {
            assert_eq!(ch.sinr[(i, 0)], 0.0);
            assert_eq!(ch.capacity[(i, 0)], 0.0);
        }
        assert!(ch.sinr[(topo.wifi_index(), 0)] > 0.0);
    }

    #[test]
    fn mirror_positions_give_permuted_lifi_snr() {
        let topo = build_topology(&TopologyConfig::default()).unwrap();
        let (x, y) = (2.2, 6.9);
        let ues = [Point3::new(x, y, 0.5), Point3::new(10.0 - x, y, 0.5)];
        let sinr = sinr_matrix(&topo, &ues).unwrap();
        let mut a: Vec<f64> = topo.lifi_indices().map(|i| sinr[(i, 0)]).collect();
        let mut b: Vec<f64> = topo.lifi_indices().map(|i| sinr[(i, 1)]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (p, q) in a.iter().zip(&b) {
            assert_relative_eq!(p, q, max_relative = 1e-12);
        }
    }

    #[test]
    fn sinr_matrix_is_pure() {
        let topo = build_topology(&TopologyConfig::default()).unwrap();
        let ues = [Point3::new(1.0, 2.0, 0.5), Point3::new(4.0, 8.0, 0.5)];
        assert_eq!(sinr_matrix(&topo, &ues).unwrap(), sinr_matrix(&topo, &ues).unwrap());
        assert!(sinr_matrix(&topo, &[]).is_err());
    }
}
