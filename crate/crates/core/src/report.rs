//! CSV emitters. Every file opens with `#` comment lines holding the resolved
//! configuration, then a mandatory header row.

use std::fmt::Write;

use crate::rl::MetricsRow;
use crate::trajectory::{SweepRow, TrackingResult};

/// `# key = value` lines.
pub fn config_header(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".into()
    }
}

pub fn metrics_csv(pairs: &[(String, String)], rows: &[MetricsRow]) -> String {
    let mut s = config_header(pairs);
    s.push_str("iteration,env_steps,mean_episode_reward,mean_episode_length,kl,lr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            r.env_steps,
            num(r.mean_episode_reward),
            num(r.mean_episode_length),
            num(r.kl),
            num(r.lr)
        );
    }
    s
}

pub fn tracking_csv(pairs: &[(String, String)], res: &TrackingResult) -> String {
    let mut s = config_header(pairs);
    let _ = writeln!(s, "# controller = {}", res.controller);
    let _ = writeln!(s, "# rms = {}", num(res.rms));
    let _ = writeln!(s, "# diverged = {}", res.diverged);
    s.push_str("t,ref_x,ref_y,ref_z,x,y,z,err\n");
    for i in 0..res.times.len() {
        let (r, a) = (res.reference[i], res.actual[i]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            num(res.times[i]),
            num(r.x),
            num(r.y),
            num(r.z),
            num(a.x),
            num(a.y),
            num(a.z),
            num(res.errors[i])
        );
    }
    s
}

pub fn sweep_csv(pairs: &[(String, String)], rows: &[SweepRow]) -> String {
    let mut s = config_header(pairs);
    s.push_str("controller,dt,rms,diverged\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.controller, num(r.dt), num(r.rms), r.diverged);
    }
    s
}

/// Rows are trajectories, columns controllers; `rms[i][j]` belongs to
/// trajectory `i` and controller `j`. Diverged runs are written as `diverged`.
pub fn summary_csv(
    pairs: &[(String, String)],
    trajectories: &[String],
    controllers: &[String],
    rms: &[Vec<Option<f64>>],
) -> String {
    let mut s = config_header(pairs);
    s.push_str("trajectory");
    for c in controllers {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (name, row) in trajectories.iter().zip(rms) {
        s.push_str(name);
        for v in row {
            s.push(',');
            match v {
                Some(x) => s.push_str(&num(*x)),
                None => s.push_str("diverged"),
            }
        }
        s.push('\n');
    }
    s
}

/// Data lines of a CSV produced here (comment lines dropped).
pub fn csv_body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn pairs() -> Vec<(String, String)> {
        vec![("seed".into(), "3".into())]
    }

    #[test]
    fn metrics_layout() {
        let row = MetricsRow {
            iteration: 1,
            env_steps: 2048,
            mean_episode_reward: 12.5,
            mean_episode_length: 40.0,
            kl: 0.004,
            lr: 0.001,
            success_rate: 0.5,
            update_accepted: true,
        };
        let text = metrics_csv(&pairs(), &[row]);
        assert!(text.starts_with("# seed = 3\n"));
        assert_eq!(
            csv_body(&text),
            vec![
                "iteration,env_steps,mean_episode_reward,mean_episode_length,kl,lr",
                "1,2048,12.5,40,0.004,0.001"
            ]
        );
    }

    #[test]
    fn tracking_rows_match_steps() {
        let res = TrackingResult {
            controller: "pid".into(),
            trajectory: "circle".into(),
            dt: 0.1,
            times: vec![0.0, 0.1],
            reference: vec![Vec3::new(1.0, 2.0, 3.0); 2],
            actual: vec![Vec3::new(1.0, 2.0, 3.5); 2],
            errors: vec![0.5, 0.5],
            rms: 0.5,
            diverged: false,
        };
        let text = tracking_csv(&pairs(), &res);
        let body = csv_body(&text);
        assert_eq!(body.len(), 3);
        assert_eq!(body[1], "0,1,2,3,1,2,3.5,0.5");
    }

    #[test]
    fn summary_layout() {
        let text = summary_csv(
            &pairs(),
            &["circle".into(), "spiral1".into()],
            &["pid".into(), "trpo".into()],
            &[vec![Some(0.01), Some(0.02)], vec![Some(0.03), None]],
        );
        assert_eq!(
            csv_body(&text),
            vec!["trajectory,pid,trpo", "circle,0.01,0.02", "spiral1,0.03,diverged"]
        );
    }
}
