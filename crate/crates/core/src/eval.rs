//! Registration metrics: Euler-sum rotation error, translation error, Acc
//! and Bad Rate, plus per-stage timing.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::io_util::write_atomic_str;

pub const SUCCESS_RRE_DEG: f64 = 5.0;
pub const SUCCESS_RTE_M: f64 = 2.0;
pub const BAD_RRE_DEG: f64 = 10.0;
pub const BAD_RTE_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerConvention {
    /// `R = Rx(a)·Ry(b)·Rz(c)`.
    #[default]
    Xyz,
    /// `R = Rz(a)·Ry(b)·Rx(c)`.
    Zyx,
}

impl FromStr for EulerConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(EulerConvention::Xyz),
            "zyx" => Ok(EulerConvention::Zyx),
            other => Err(Error::Config(format!("unknown Euler convention `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub angles: [f64; 3],
    /// Middle angle at ±90°: the outer two are not separable and the third
    /// is set to zero.
    pub gimbal_lock: bool,
}

/// Intrinsic Euler angles (radians) in the given convention.
pub fn euler_angles(r: &Mat3, conv: EulerConvention) -> EulerAngles {
    match conv {
        EulerConvention::Xyz => {
            // R02 = sin b, R12 = −sin a cos b, R22 = cos a cos b,
            // R01 = −cos b sin c, R00 = cos b cos c
            let sb = r[(0, 2)].clamp(-1.0, 1.0);
            let b = sb.asin();
            if (1.0 - sb.abs()) * 1.0 < 1e-18 || b.cos().abs() < 1e-9 {
                // Rx(a)Ry(±90°) leaves only a ± c observable through R10, R11
                let a = r[(1, 0)].atan2(r[(1, 1)]);
                EulerAngles {
                    angles: [a, b, 0.0],
                    gimbal_lock: true,
                }
            } else {
                EulerAngles {
                    angles: [(-r[(1, 2)]).atan2(r[(2, 2)]), b, (-r[(0, 1)]).atan2(r[(0, 0)])],
                    gimbal_lock: false,
                }
            }
        }
        EulerConvention::Zyx => {
            // R20 = −sin b, R21 = cos b sin c, R22 = cos b cos c,
            // R10 = cos b sin a, R00 = cos b cos a
            let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
            let b = sb.asin();
            if b.cos().abs() < 1e-9 {
                let a = (-r[(0, 1)]).atan2(r[(1, 1)]);
                EulerAngles {
                    angles: [a, b, 0.0],
                    gimbal_lock: true,
                }
            } else {
                EulerAngles {
                    angles: [r[(1, 0)].atan2(r[(0, 0)]), b, r[(2, 1)].atan2(r[(2, 2)])],
                    gimbal_lock: false,
                }
            }
        }
    }
}

/// Sum of absolute Euler angles of `R_gt⁻¹·R_est`, degrees.
pub fn rre(r_gt: &Mat3, r_est: &Mat3, conv: EulerConvention) -> f64 {
    rre_detailed(r_gt, r_est, conv).0
}

/// [`rre`] plus the gimbal-lock flag.
pub fn rre_detailed(r_gt: &Mat3, r_est: &Mat3, conv: EulerConvention) -> (f64, bool) {
    let e = euler_angles(&(r_gt.transpose() * r_est), conv);
    (e.angles.iter().map(|a| a.abs().to_degrees()).sum(), e.gimbal_lock)
}

/// `‖t_gt − t_est‖`, meters.
pub fn rte(t_gt: &Vec3, t_est: &Vec3) -> f64 {
    (t_gt - t_est).norm()
}

/// Wall time per pipeline stage, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub project: f64,
    pub edges: f64,
    pub describe: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub pose: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.project + self.edges + self.describe + self.matching + self.pose
    }

    fn add(&mut self, o: &StageTimes) {
        self.project += o.project;
        self.edges += o.edges;
        self.describe += o.describe;
        self.matching += o.matching;
        self.pose += o.pose;
    }

    fn scale(&mut self, s: f64) {
        self.project *= s;
        self.edges *= s;
        self.describe *= s;
        self.matching *= s;
        self.pose *= s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub scene: String,
    pub rre: f64,
    pub rte: f64,
    pub success: bool,
    pub bad: bool,
    pub wall_time: StageTimes,
}

impl RegistrationResult {
    pub fn new(scene: impl Into<String>, rre: f64, rte: f64, wall_time: StageTimes) -> Self {
        Self {
            scene: scene.into(),
            rre,
            rte,
            success: rre < SUCCESS_RRE_DEG && rte < SUCCESS_RTE_M,
            bad: !(rre <= BAD_RRE_DEG && rte <= BAD_RTE_M),
            wall_time,
        }
    }

    pub fn from_transforms(
        scene: impl Into<String>,
        gt: &RigidTransform,
        est: &RigidTransform,
        conv: EulerConvention,
        wall_time: StageTimes,
    ) -> Self {
        Self::new(
            scene,
            rre(gt.rotation(), est.rotation(), conv),
            rte(gt.translation(), est.translation()),
            wall_time,
        )
    }

    /// A scene whose registration produced no pose: counted as bad, never
    /// as a success.
    pub fn failed(scene: impl Into<String>, wall_time: StageTimes) -> Self {
        Self::new(scene, f64::INFINITY, f64::INFINITY, wall_time)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(v: &[f64]) -> MeanStd {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    /// Statistics over scenes that produced a pose.
    pub rte: MeanStd,
    pub rre: MeanStd,
    pub failed: usize,
    pub acc_percent: f64,
    pub bad_rate_percent: f64,
    pub mean_time: StageTimes,
    pub mean_total_time: f64,
    pub total_time: f64,
}

/// Aggregates in a fixed order, so permuting the input changes nothing.
pub fn aggregate(results: &[RegistrationResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::Contract("nothing to aggregate".into()));
    }
    let mut sorted: Vec<&RegistrationResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.scene
            .cmp(&b.scene)
            .then(a.rre.total_cmp(&b.rre))
            .then(a.rte.total_cmp(&b.rte))
    });
    let finite: Vec<&&RegistrationResult> = sorted.iter().filter(|r| r.rre.is_finite() && r.rte.is_finite()).collect();
    let (rte_s, rre_s) = if finite.is_empty() {
        (
            MeanStd { mean: f64::NAN, std: f64::NAN },
            MeanStd { mean: f64::NAN, std: f64::NAN },
        )
    } else {
        (
            mean_std(&finite.iter().map(|r| r.rte).collect::<Vec<_>>()),
            mean_std(&finite.iter().map(|r| r.rre).collect::<Vec<_>>()),
        )
    };
    let n = sorted.len() as f64;
    let mut times = StageTimes::default();
    for r in &sorted {
        times.add(&r.wall_time);
    }
    let total_time = times.total();
    times.scale(1.0 / n);
    Ok(Summary {
        scenes: sorted.len(),
        rte: rte_s,
        rre: rre_s,
        failed: sorted.len() - finite.len(),
        acc_percent: 100.0 * sorted.iter().filter(|r| r.success).count() as f64 / n,
        bad_rate_percent: 100.0 * sorted.iter().filter(|r| r.bad).count() as f64 / n,
        mean_total_time: times.total(),
        mean_time: times,
        total_time,
    })
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenes          {}\n", self.scenes));
        s.push_str(&format!("RTE (m)         {:.3} ± {:.3}\n", self.rte.mean, self.rte.std));
        s.push_str(&format!("RRE (deg)       {:.3} ± {:.3}\n", self.rre.mean, self.rre.std));
        s.push_str(&format!("Acc (%)         {:.2}\n", self.acc_percent));
        s.push_str(&format!("Bad rate (%)    {:.2}\n", self.bad_rate_percent));
        s.push_str(&format!("failed          {}\n", self.failed));
        let t = &self.mean_time;
        s.push_str(&format!(
            "time/scene (s)  {:.4} (project {:.4}, edges {:.4}, describe {:.4}, match {:.4}, pose {:.4})\n",
            self.mean_total_time, t.project, t.edges, t.describe, t.matching, t.pose
        ));
        s.push_str(&format!("total time (s)  {:.3}\n", self.total_time));
        s
    }
}

pub fn results_csv(results: &[RegistrationResult]) -> String {
    let mut s = String::from("scene,rre,rte,success,bad,time_total,time_project,time_edges,time_describe,time_match,time_pose\n");
    for r in results {
        let t = &r.wall_time;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scene,
            r.rre,
            r.rte,
            r.success,
            r.bad,
            t.total(),
            t.project,
            t.edges,
            t.describe,
            t.matching,
            t.pose
        ));
    }
    s
}

/// Writes `summary.json`, `summary.txt` and `scenes.csv` into `dir`.
pub fn write_report(dir: &Path, summary: &Summary, results: &[RegistrationResult]) -> Result<()> {
    write_atomic_str(&dir.join("summary.json"), &summary.to_json())?;
    write_atomic_str(&dir.join("summary.txt"), &summary.to_table())?;
    write_atomic_str(&dir.join("scenes.csv"), &results_csv(results))
}
