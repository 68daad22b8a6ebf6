//! Subflow connection matrices for MPTCP multi-homing and single-link TCP.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::env::NetworkTopology;
use crate::error::{Error, Result};

/// Binary connection matrix `chi[(i, j)]`: AP `i` carries a subflow of UE `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    chi: Array2<bool>,
    n_subflows_per_ue: Option<usize>,
}

impl Association {
    /// Wraps an arbitrary mask. The per-UE subflow count is recorded only when
    /// every column has the same number of links.
    pub fn from_mask(chi: Array2<bool>) -> Self {
        let counts: Vec<usize> = chi
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|&&b| b).count())
            .collect();
        let n_subflows_per_ue = match counts.first() {
            Some(&first) if counts.iter().all(|&c| c == first) => Some(first),
            _ => None,
        };
        Self {
            chi,
            n_subflows_per_ue,
        }
    }

    pub fn chi(&self) -> &Array2<bool> {
        &self.chi
    }

    pub fn n_aps(&self) -> usize {
        self.chi.nrows()
    }

    pub fn n_ues(&self) -> usize {
        self.chi.ncols()
    }

    pub fn n_subflows_per_ue(&self) -> Option<usize> {
        self.n_subflows_per_ue
    }

    pub fn is_connected(&self, ap: usize, ue: usize) -> bool {
        self.chi[(ap, ue)]
    }

    /// APs serving UE `j`, ascending.
    pub fn aps_of(&self, ue: usize) -> Vec<usize> {
        (0..self.n_aps()).filter(|&i| self.chi[(i, ue)]).collect()
    }

    /// UEs served by AP `i`, ascending.
    pub fn ues_of(&self, ap: usize) -> Vec<usize> {
        (0..self.n_ues()).filter(|&j| self.chi[(ap, j)]).collect()
    }

    pub fn column(&self, ue: usize) -> Vec<bool> {
        self.chi.column(ue).to_vec()
    }
}

/// Each UE keeps the WiFi link plus the `n_f - 1` LiFi links of highest SINR
/// (lowest AP index on ties).
pub fn mptcp_association(channel: &ChannelState, topology: &NetworkTopology, n_f: usize) -> Result<Association> {
    let lifi: Vec<usize> = topology.lifi_indices().collect();
    if n_f < 2 || n_f > lifi.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "n_f must lie in [2, {}], got {n_f}",
            lifi.len() + 1
        )));
    }
    if channel.n_aps() != topology.n_aps() {
        return Err(Error::dim("channel AP count", topology.n_aps(), channel.n_aps()));
    }
    let wifi = topology.wifi_index();
    let mut chi = Array2::from_elem((channel.n_aps(), channel.n_ues()), false);
    for j in 0..channel.n_ues() {
        chi[(wifi, j)] = true;
        let mut ranked = lifi.clone();
        // stable sort keeps ascending index order among equal SINR
        ranked.sort_by(|&a, &b| channel.sinr[(b, j)].total_cmp(&channel.sinr[(a, j)]));
        for &i in ranked.iter().take(n_f - 1) {
            chi[(i, j)] = true;
        }
    }
    Ok(Association::from_mask(chi))
}

/// What "highest channel quality" ranks by in the SSS baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SssRanking {
    #[default]
    Sinr,
    Capacity,
}

/// Signal-strength strategy: one link per UE to the AP of highest SINR.
pub fn sss_association(channel: &ChannelState) -> Association {
    sss_association_by(channel, SssRanking::Sinr)
}

pub fn sss_association_by(channel: &ChannelState, ranking: SssRanking) -> Association {
    let metric = match ranking {
        SssRanking::Sinr => &channel.sinr,
        SssRanking::Capacity => &channel.capacity,
    };
    let mut chi = Array2::from_elem(metric.raw_dim(), false);
    for j in 0..metric.ncols() {
        let mut best = 0;
        for i in 1..metric.nrows() {
            if metric[(i, j)] > metric[(best, j)] {
                best = i;
            }
        }
        if metric.nrows() > 0 {
            chi[(best, j)] = true;
        }
    }
    Association::from_mask(chi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LiFiRadioParams, WiFiRadioParams};
    use crate::env::{ApDescriptor, ApKind, Point3};
    use ndarray::array;

    fn four_ap_topology() -> NetworkTopology {
        let mut aps = vec![ApDescriptor {
            kind: ApKind::WiFi,
            position: Point3::new(1.0, 1.0, 1.0),
            bandwidth: 20e6,
        }];
        for k in 0..3 {
            aps.push(ApDescriptor {
                kind: ApKind::LiFi,
                position: Point3::new(1.0 + k as f64, 2.0, 3.0),
                bandwidth: 20e6,
            });
        }
        NetworkTopology::new((5.0, 5.0, 3.0), aps, LiFiRadioParams::default(), WiFiRadioParams::default()).unwrap()
    }

    fn channel_from(sinr: Array2<f64>) -> ChannelState {
        ChannelState {
            capacity: sinr.clone(),
            sinr,
        }
    }

    #[test]
    fn mptcp_picks_best_lifi_plus_wifi() {
        let ch = channel_from(array![[10.0], [5.0], [20.0], [15.0]]);
        let a = mptcp_association(&ch, &four_ap_topology(), 3).unwrap();
        assert_eq!(a.aps_of(0), vec![0, 2, 3]);
        assert_eq!(a.n_subflows_per_ue(), Some(3));
    }

    #[test]
    fn mptcp_exhaustive_selection() {
        let ch = channel_from(array![[10.0, 1.0], [5.0, 0.0], [20.0, 0.0], [15.0, 0.0]]);
        let a = mptcp_association(&ch, &four_ap_topology(), 4).unwrap();
        assert!(a.chi().iter().all(|&b| b));
    }

    #[test]
    fn mptcp_tie_prefers_lower_index() {
        let ch = channel_from(array![[1.0], [7.0], [7.0], [3.0]]);
        let a = mptcp_association(&ch, &four_ap_topology(), 2).unwrap();
        assert_eq!(a.aps_of(0), vec![0, 1]);
    }

    #[test]
    fn mptcp_rejects_out_of_range_nf() {
        let ch = channel_from(array![[1.0], [7.0], [7.0], [3.0]]);
        assert!(mptcp_association(&ch, &four_ap_topology(), 1).is_err());
        assert!(mptcp_association(&ch, &four_ap_topology(), 5).is_err());
    }

    #[test]
    fn sss_argmax_and_degenerate() {
        let ch = channel_from(array![[10.0, 0.0, 3.0], [5.0, 0.0, 3.0], [20.0, 0.0, 1.0], [15.0, 0.0, 2.0]]);
        let a = sss_association(&ch);
        assert_eq!(a.aps_of(0), vec![2]);
        assert_eq!(a.aps_of(1), vec![0]);
        assert_eq!(a.aps_of(2), vec![0]);
        let total: usize = a.chi().iter().filter(|&&b| b).count();
        assert_eq!(total, 3);
        assert_eq!(a.n_subflows_per_ue(), Some(1));
    }

    #[test]
    fn derived_sets_are_consistent() {
        let ch = channel_from(array![[10.0, 2.0], [5.0, 9.0], [20.0, 1.0], [15.0, 4.0]]);
        let a = mptcp_association(&ch, &four_ap_topology(), 3).unwrap();
        for i in 0..a.n_aps() {
            for j in a.ues_of(i) {
                assert!(a.aps_of(j).contains(&i));
            }
        }
    }
}
