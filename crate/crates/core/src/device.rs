//! Device limits used to derive automatic constraints.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub name: String,
    /// Maximum work-items in one workgroup.
    pub max_local_total: u64,
    pub max_local_per_dim: [u64; 3],
    pub local_mem_bytes: u64,
    pub peak_gflops: Option<f64>,
    pub peak_gbs: Option<f64>,
}

/// Names accepted by [`DeviceModel::preset`].
pub const PRESETS: [&str; 4] = ["K40m", "GTX480", "HD7970", "Iris"];

impl DeviceModel {
    /// Built-in presets for the four reference GPUs. Peak throughput is the
    /// vendor figure; workgroup and local-memory limits are configuration
    /// defaults for each architecture.
    pub fn preset(name: &str) -> Option<DeviceModel> {
        let key = name.to_ascii_lowercase();
        let (name, total, dims, local, gflops, gbs) = match key.as_str() {
            "k40m" | "tesla k40m" | "nvidia tesla k40m" => {
                ("K40m", 1024, [1024, 1024, 64], 48 * 1024, 4291.0, 288.0)
            }
            "gtx480" | "geforce gtx480" | "nvidia geforce gtx480" => {
                ("GTX480", 1024, [1024, 1024, 64], 48 * 1024, 1345.0, 177.0)
            }
            "hd7970" | "radeon hd7970" | "amd radeon hd7970" => {
                ("HD7970", 256, [256, 256, 256], 32 * 1024, 4368.0, 288.0)
            }
            "iris" | "iris 5100" | "intel iris 5100" => {
                ("Iris", 512, [512, 512, 512], 64 * 1024, 832.0, 26.0)
            }
            _ => return None,
        };
        Some(DeviceModel {
            name: name.into(),
            max_local_total: total,
            max_local_per_dim: dims,
            local_mem_bytes: local,
            peak_gflops: Some(gflops),
            peak_gbs: Some(gbs),
        })
    }

    /// A device without practical limits.
    pub fn unlimited(name: &str) -> DeviceModel {
        DeviceModel {
            name: name.into(),
            max_local_total: u64::MAX,
            max_local_per_dim: [u64::MAX; 3],
            local_mem_bytes: u64::MAX,
            peak_gflops: None,
            peak_gbs: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let d = DeviceModel::preset(name).unwrap();
            assert_eq!(d.name, name);
            assert!(d.max_local_per_dim.iter().all(|&l| l >= 1));
        }
        assert_eq!(
            DeviceModel::preset("tesla K40M").unwrap().peak_gflops,
            Some(4291.0)
        );
        assert!(DeviceModel::preset("Quadro").is_none());
    }

    #[test]
    fn peak_ratio_matches_table() {
        // GFLOPS per GB/s balance of each preset.
        let ratio = |n| {
            let d = DeviceModel::preset(n).unwrap();
            d.peak_gflops.unwrap() / d.peak_gbs.unwrap()
        };
        assert!((ratio("K40m") - 14.9).abs() < 0.05);
        assert!((ratio("GTX480") - 7.6).abs() < 0.05);
        assert!((ratio("HD7970") - 15.1).abs() < 0.1);
    }
}
