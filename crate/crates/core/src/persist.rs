//! Policy files and atomic artifact writes.
//!
//! A policy file is a text header of `key = value` lines closed by `END`,
//! followed by the flat parameter array (network weights, then log std) as
//! little-endian f64.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::env::ActionSpec;
use crate::error::{CdprError, Result};
use crate::neural::{Activation, HeadKind, MlpSpec, ParamVector, RunningNorm};
use crate::rl::Policy;

pub const POLICY_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "cdpr-policy";
const END: &str = "END";

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyMeta {
    pub algorithm: String,
    pub seed: u64,
    pub budget: usize,
    /// Resolved experiment configuration, echoed verbatim.
    pub config: Vec<(String, String)>,
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn action_text(spec: &ActionSpec) -> String {
    match spec {
        ActionSpec::Continuous => "continuous".into(),
        ActionSpec::Discrete { levels } => format!("discrete:{levels}"),
    }
}

pub fn encode_policy(policy: &Policy, meta: &PolicyMeta) -> Vec<u8> {
    let params: Vec<f64> = policy.net_params.0.iter().chain(&policy.log_std).copied().collect();
    let mut h = format!("{MAGIC} {POLICY_FORMAT_VERSION}\n");
    let mut line = |k: &str, v: String| h.push_str(&format!("{k} = {v}\n"));
    line("obs_dim", policy.net.input_dim.to_string());
    line("action", action_text(&policy.action_spec));
    line("head", policy.head.name().into());
    line(
        "hidden",
        policy
            .net
            .hidden
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    line("output_dim", policy.net.output_dim.to_string());
    line("activation", policy.net.activation.name().into());
    line("norm_count", format!("{:?}", policy.obs_norm.count));
    line("norm_mean", floats(&policy.obs_norm.mean));
    line("norm_var", floats(&policy.obs_norm.var));
    line("algorithm", meta.algorithm.clone());
    line("seed", meta.seed.to_string());
    line("budget", meta.budget.to_string());
    line("param_count", params.len().to_string());
    for (k, v) in &meta.config {
        line(&format!("config.{k}"), v.clone());
    }
    h.push_str(END);
    h.push('\n');
    let mut out = h.into_bytes();
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn malformed(msg: impl Into<String>) -> CdprError {
    CdprError::PolicyFile(msg.into())
}

fn field<'a>(fields: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| malformed(format!("header lacks `{key}`")))
}

fn number<T: std::str::FromStr>(fields: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = field(fields, key)?;
    v.parse()
        .map_err(|_| malformed(format!("`{key}` is not a number: {v:?}")))
}

fn float_list(fields: &BTreeMap<String, String>, key: &str) -> Result<Vec<f64>> {
    let v = field(fields, key)?;
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| malformed(format!("`{key}` holds a non-number {x:?}")))
        })
        .collect()
}

fn check_dim(field: &str, header: usize, actual: usize) -> Result<()> {
    if header != actual {
        return Err(CdprError::PolicyDimension {
            field: field.into(),
            header,
            actual,
        });
    }
    Ok(())
}

pub fn decode_policy(bytes: &[u8]) -> Result<(Policy, PolicyMeta)> {
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| malformed("header is not terminated by END"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| malformed("header is not UTF-8"))?;
    let payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or("");
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| malformed(format!("not a policy file (first line {first:?})")))?;
    let version: u32 = version
        .parse()
        .map_err(|_| malformed(format!("unreadable format version {version:?}")))?;
    if version != POLICY_FORMAT_VERSION {
        return Err(CdprError::PolicyVersion {
            found: version,
            expected: POLICY_FORMAT_VERSION,
        });
    }

    let mut fields = BTreeMap::new();
    let mut config = Vec::new();
    for l in lines {
        let (k, v) = l
            .split_once(" = ")
            .ok_or_else(|| malformed(format!("bad header line {l:?}")))?;
        match k.strip_prefix("config.") {
            Some(ck) => config.push((ck.to_string(), v.to_string())),
            None => {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }

    let obs_dim: usize = number(&fields, "obs_dim")?;
    let output_dim: usize = number(&fields, "output_dim")?;
    let hidden: Vec<usize> = match field(&fields, "hidden")? {
        "" => vec![],
        h => h
            .split(',')
            .map(|x| x.parse().map_err(|_| malformed(format!("bad hidden size {x:?}"))))
            .collect::<Result<_>>()?,
    };
    if field(&fields, "activation")? != Activation::Tanh.name() {
        return Err(malformed("unsupported activation"));
    }
    let action_spec = match field(&fields, "action")? {
        "continuous" => ActionSpec::Continuous,
        a => match a.strip_prefix("discrete:").and_then(|n| n.parse().ok()) {
            Some(levels) => ActionSpec::Discrete { levels },
            None => return Err(malformed(format!("unknown action spec {a:?}"))),
        },
    };
    let head = match (field(&fields, "head")?, action_spec) {
        ("squashed_gaussian", ActionSpec::Continuous) => HeadKind::SquashedGaussian { dim: output_dim },
        ("deterministic", ActionSpec::Continuous) => HeadKind::Deterministic { dim: output_dim },
        ("categorical", ActionSpec::Discrete { levels }) => {
            if levels == 0 || !output_dim.is_multiple_of(levels) {
                return Err(malformed(
                    "categorical output size is not a multiple of the level count",
                ));
            }
            HeadKind::Categorical {
                groups: output_dim / levels,
                levels,
            }
        }
        (h, _) => return Err(malformed(format!("head {h:?} does not fit the action spec"))),
    };
    let net = MlpSpec::new(obs_dim, hidden, output_dim).map_err(|_| malformed("layer sizes must be positive"))?;

    let mean = float_list(&fields, "norm_mean")?;
    let var = float_list(&fields, "norm_var")?;
    check_dim("norm_mean", obs_dim, mean.len())?;
    check_dim("norm_var", obs_dim, var.len())?;
    let obs_norm = RunningNorm {
        count: number(&fields, "norm_count")?,
        mean,
        var,
    };

    let declared: usize = number(&fields, "param_count")?;
    let found = payload.len() / 8;
    if !payload.len().is_multiple_of(8) || found < declared {
        return Err(CdprError::PolicyTruncated {
            expected: declared,
            found,
        });
    }
    check_dim("param_count", net.param_count() + head.extra_params(), declared)?;
    check_dim("payload", declared, found)?;
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (w, s) = params.split_at(net.param_count());

    let meta = PolicyMeta {
        algorithm: field(&fields, "algorithm")?.to_string(),
        seed: number(&fields, "seed")?,
        budget: number(&fields, "budget")?,
        config,
    };
    let policy = Policy {
        action_spec,
        head,
        net,
        net_params: ParamVector(w.to_vec()),
        log_std: s.to_vec(),
        obs_norm,
    };
    Ok((policy, meta))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CdprError {
    CdprError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn load_policy(path: &Path) -> Result<(Policy, PolicyMeta)> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_policy(&bytes)
}

pub fn save_policy(path: &Path, policy: &Policy, meta: &PolicyMeta) -> Result<()> {
    let mut batch = ArtifactBatch::default();
    batch.stage(path, &encode_policy(policy, meta))?;
    batch.commit()
}

/// Files written to temporaries beside their destinations and renamed into
/// place together by [`ArtifactBatch::commit`]. Dropping an uncommitted batch
/// deletes the temporaries.
#[derive(Default)]
pub struct ArtifactBatch {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl ArtifactBatch {
    pub fn stage(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
        tmp.write_all(contents).map_err(|e| io_err(path, e))?;
        tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (tmp, path) in self.staged {
            tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_policy(spec: ActionSpec) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Policy::stochastic(9, &[8, 6], spec, -0.7, &mut rng).unwrap();
        let obs: Vec<Vec<f64>> = (0..20)
            .map(|i| (0..9).map(|k| (i * k) as f64 * 0.37 - 1.1).collect())
            .collect();
        p.obs_norm.update(obs.iter().map(|v| v.as_slice()));
        p
    }

    fn meta() -> PolicyMeta {
        PolicyMeta {
            algorithm: "trpo".into(),
            seed: 7,
            budget: 1000,
            config: vec![("dynamics.dt".into(), "0.1".into())],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for spec in [ActionSpec::Continuous, ActionSpec::Discrete { levels: 5 }] {
            let p = sample_policy(spec);
            let (q, m) = decode_policy(&encode_policy(&p, &meta())).unwrap();
            assert_eq!(q, p);
            assert_eq!(m, meta());
            let obs = [0.3, -0.2, 1.0, 0.1, 0.0, -0.4, 1.2, 1.3, 1.4];
            let a = p.output(&p.normalize(&obs)).unwrap();
            let b = q.output(&q.normalize(&obs)).unwrap();
            assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Policy::deterministic(12, &[4], &mut rng).unwrap();
        assert_eq!(decode_policy(&encode_policy(&d, &meta())).unwrap().0, d);
    }

    #[test]
    fn truncated_payload_names_counts() {
        let p = sample_policy(ActionSpec::Continuous);
        let n = p.net.param_count() + 4;
        let mut bytes = encode_policy(&p, &meta());
        bytes.truncate(bytes.len() - 8);
        assert_eq!(
            decode_policy(&bytes).unwrap_err(),
            CdprError::PolicyTruncated {
                expected: n,
                found: n - 1
            }
        );
    }

    #[test]
    fn edited_obs_dim_is_a_dimension_mismatch() {
        let p = sample_policy(ActionSpec::Continuous);
        let bytes = encode_policy(&p, &meta());
        let payload = &bytes[bytes.len() - 8 * (p.net.param_count() + 4)..];
        let header = String::from_utf8(bytes[..bytes.len() - payload.len()].to_vec()).unwrap();
        let mut edited = header.replacen("obs_dim = 9", "obs_dim = 12", 1).into_bytes();
        edited.extend_from_slice(payload);
        assert!(matches!(decode_policy(&edited), Err(CdprError::PolicyDimension { .. })));
    }

    #[test]
    fn version_mismatch() {
        let p = sample_policy(ActionSpec::Continuous);
        let mut bytes = encode_policy(&p, &meta());
        let pos = MAGIC.len() + 1;
        bytes[pos] = b'9';
        assert_eq!(
            decode_policy(&bytes).unwrap_err(),
            CdprError::PolicyVersion { found: 9, expected: 1 }
        );
        assert!(matches!(decode_policy(b"garbage"), Err(CdprError::PolicyFile(_))));
    }

    #[test]
    fn uncommitted_batch_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let mut batch = ArtifactBatch::default();
        batch.stage(&path, b"x\n").unwrap();
        drop(batch);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

        let mut batch = ArtifactBatch::default();
        batch.stage(&path, b"x\n").unwrap();
        batch.commit().unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"x\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
