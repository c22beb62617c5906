//! CSV and JSON emission for every tabular artifact the solvers produce,
//! plus the matching CSV import for quadrature rules.
//!
//! All writers normalize to LF line endings and format floats with the
//! shortest round-trip representation, so identical in-memory values yield
//! byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::basis::OrthonormalPolyFamily;
use crate::chaos::{ChaosExpansion, ReducedExpansion, WeightingMatrix};
use crate::driver::{IterationRecord, McSummary, MixedExpansion, VarianceFractions};
use crate::error::{Error, Result};
use crate::field::KlDecomposition;
use crate::quadrature::QuadratureRule;

/// Shortest round-trip decimal form of a float.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        // Avoid the "-0" artifact so reruns cannot differ in sign of zero.
        "0".into()
    } else {
        format!("{v}")
    }
}

fn join(fields: &[String]) -> String {
    fields.join(",")
}

/// Writes one CSV file: optional `# key=value ...` comment line, a header
/// line, then rows.
pub fn write_csv(
    path: &Path,
    comment: Option<&str>,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&join(header));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "csv row with {} fields against {} columns",
                row.len(),
                header.len()
            )));
        }
        out.push_str(&join(row));
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Serializes any value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Provenance of a quadrature rule, carried in the CSV comment line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMeta {
    pub dimension: usize,
    pub level: usize,
    /// "exponential", "linear", or "tensor".
    pub growth: String,
    pub exactness_degree: usize,
}

/// Writes a rule as CSV: node coordinates then the weight, with the
/// provenance in the comment line.
pub fn write_rule_csv(path: &Path, rule: &QuadratureRule, meta: &RuleMeta) -> Result<()> {
    let comment = format!(
        "dimension={} level={} growth={} exactness_degree={}",
        meta.dimension, meta.level, meta.growth, meta.exactness_degree
    );
    let mut header: Vec<String> = (1..=rule.dimension()).map(|d| format!("node_{d}")).collect();
    header.push("weight".into());
    let rows: Vec<Vec<String>> = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(node, &w)| {
            let mut row: Vec<String> = node.iter().map(|&x| format_f64(x)).collect();
            row.push(format_f64(w));
            row
        })
        .collect();
    write_csv(path, Some(&comment), &header, &rows)
}

/// Reads a rule written by [`write_rule_csv`], reporting parse failures by
/// line number.
pub fn read_rule_csv(path: &Path) -> Result<(QuadratureRule, RuleMeta)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, comment) = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let comment = comment.strip_prefix("# ").ok_or_else(|| {
        Error::Parse(format!("{}:1: expected a '# key=value' comment line", path.display()))
    })?;
    let mut meta = RuleMeta { dimension: 0, level: 0, growth: String::new(), exactness_degree: 0 };
    for kv in comment.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            Error::Parse(format!("{}:1: malformed metadata entry '{kv}'", path.display()))
        })?;
        match k {
            "dimension" => meta.dimension = parse_usize(path, 1, v)?,
            "level" => meta.level = parse_usize(path, 1, v)?,
            "growth" => meta.growth = v.to_string(),
            "exactness_degree" => meta.exactness_degree = parse_usize(path, 1, v)?,
            other => {
                return Err(Error::Parse(format!(
                    "{}:1: unknown metadata key '{other}'",
                    path.display()
                )))
            }
        }
    }
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: missing header line", path.display())))?;
    let n_cols = header.split(',').count();
    if n_cols != meta.dimension + 1 {
        return Err(Error::Parse(format!(
            "{}:2: header has {n_cols} columns for dimension {}",
            path.display(),
            meta.dimension
        )));
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::Parse(format!(
                "{}:{}: row has {} fields, expected {n_cols}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let mut node = Vec::with_capacity(meta.dimension);
        for f in &fields[..meta.dimension] {
            node.push(parse_f64(path, i + 1, f)?);
        }
        nodes.push(node);
        weights.push(parse_f64(path, i + 1, fields[meta.dimension])?);
    }
    let rule = QuadratureRule::new(meta.dimension, nodes, weights)?;
    Ok((rule, meta))
}

fn parse_usize(path: &Path, line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|e| {
        Error::Parse(format!("{}:{line}: invalid integer '{s}': {e}", path.display()))
    })
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|e| {
        Error::Parse(format!("{}:{line}: invalid number '{s}': {e}", path.display()))
    })
}

fn index_label(idx: &[u32]) -> String {
    let parts: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
    parts.join(";")
}

/// Writes an orthonormal family: one row per member, one column per graded
/// monomial, header listing the monomial exponents.
pub fn write_family_csv(path: &Path, family: &OrthonormalPolyFamily) -> Result<()> {
    let monomials = family.monomials();
    let mut header: Vec<String> = vec!["member".into()];
    header.extend(monomials.iter().map(|m| format!("m_{}", index_label(m))));
    let rows: Vec<Vec<String>> = (0..monomials.len())
        .map(|j| {
            let mut row = vec![j.to_string()];
            row.extend(family.member_coeffs(j).iter().map(|&c| format_f64(c)));
            row
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Eigenvalue table of a decomposition: index, eigenvalue, fraction of the
/// operator trace, cumulative fraction.
pub fn write_kl_eigenvalues_csv(path: &Path, kl: &KlDecomposition) -> Result<()> {
    let header = vec![
        "index".into(),
        "eigenvalue".into(),
        "trace_fraction".into(),
        "cumulative_fraction".into(),
    ];
    let mut cum = 0.0;
    let rows: Vec<Vec<String>> = kl
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &ev)| {
            let frac = ev / kl.spectrum_sum;
            cum += frac;
            vec![(j + 1).to_string(), format_f64(ev), format_f64(frac), format_f64(cum)]
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Nodal eigenfunction table: coordinate column then one column per mode.
pub fn write_kl_eigenfunctions_csv(path: &Path, kl: &KlDecomposition) -> Result<()> {
    let mut header = vec!["x_cm".into()];
    header.extend((1..=kl.n_terms()).map(|j| format!("phi_{j}")));
    let rows: Vec<Vec<String>> = kl
        .node_coords
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut row = vec![format_f64(x)];
            row.extend(kl.eigenfunctions.iter().map(|phi| format_f64(phi[i])));
            row
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// One nodal solution pair: coordinate, temperature, flux.
pub fn write_solution_csv(path: &Path, x: &[f64], t: &[f64], phi: &[f64]) -> Result<()> {
    let header = vec!["x_cm".into(), "temperature_K".into(), "flux_n_per_cm2_s".into()];
    let rows: Vec<Vec<String>> = x
        .iter()
        .zip(t)
        .zip(phi)
        .map(|((&xi, &ti), &pi)| vec![format_f64(xi), format_f64(ti), format_f64(pi)])
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Monte Carlo mean and variance fields over the mesh.
pub fn write_mc_summary_csv(path: &Path, x: &[f64], summary: &McSummary) -> Result<()> {
    let header = vec![
        "x_cm".into(),
        "mean_temperature_K".into(),
        "var_temperature_K2".into(),
        "mean_flux_n_per_cm2_s".into(),
        "var_flux".into(),
    ];
    let rows: Vec<Vec<String>> = (0..x.len())
        .map(|i| {
            vec![
                format_f64(x[i]),
                format_f64(summary.mean_temperature[i]),
                format_f64(summary.var_temperature[i]),
                format_f64(summary.mean_flux[i]),
                format_f64(summary.var_flux[i]),
            ]
        })
        .collect();
    write_csv(
        path,
        Some(&format!(
            "n_samples={} n_failures={}",
            summary.n_samples, summary.n_failures
        )),
        &header,
        &rows,
    )
}

/// Per-iteration convergence table.
pub fn write_convergence_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let header = vec![
        "iteration".into(),
        "d".into(),
        "q".into(),
        "t_update_rel".into(),
        "phi_update_rel".into(),
        "heat_nodes".into(),
        "neutronics_nodes".into(),
    ];
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.ell.to_string(),
                r.d.to_string(),
                r.q.to_string(),
                format_f64(r.t_update),
                format_f64(r.phi_update),
                r.heat_nodes.to_string(),
                r.neutronics_nodes.to_string(),
            ]
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Reduction eigenvalue history: one row per (iteration, mode).
pub fn write_spectrum_history_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let header = vec!["iteration".into(), "mode".into(), "eigenvalue".into()];
    let mut rows = Vec::new();
    for r in records {
        for (j, &ev) in r.eigenvalues.iter().enumerate() {
            rows.push(vec![r.ell.to_string(), (j + 1).to_string(), format_f64(ev)]);
        }
    }
    write_csv(path, None, &header, &rows)
}

/// Chaos coefficients of the reduced variables: one row per basis member,
/// one column per mode.
pub fn write_eta_coeffs_csv(path: &Path, reduced: &ReducedExpansion) -> Result<()> {
    let basis = reduced.eta_basis();
    let mut header = vec!["member".into(), "index".into(), "degree".into()];
    header.extend((1..=reduced.d()).map(|j| format!("eta_{j}")));
    let rows: Vec<Vec<String>> = basis
        .indices()
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            let mut row = vec![
                k.to_string(),
                index_label(idx),
                idx.iter().sum::<u32>().to_string(),
            ];
            row.extend(reduced.reduced_coeffs.iter().map(|c| format_f64(c[k])));
            row
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Stem data: the W-norm of each coefficient against its graded index.
pub fn write_coefficient_stems_csv(
    path: &Path,
    indices: &[Vec<u32>],
    coeffs: impl Iterator<Item = Vec<f64>>,
    w: &WeightingMatrix,
) -> Result<()> {
    let header =
        vec!["member".into(), "index".into(), "degree".into(), "w_norm".into()];
    let rows: Vec<Vec<String>> = indices
        .iter()
        .zip(coeffs)
        .enumerate()
        .map(|(k, (idx, c))| {
            vec![
                k.to_string(),
                index_label(idx),
                idx.iter().sum::<u32>().to_string(),
                format_f64(w.norm_sq(&c).max(0.0).sqrt()),
            ]
        })
        .collect();
    write_csv(path, None, &header, &rows)
}

/// Stems of a temperature expansion.
pub fn write_temperature_stems_csv(
    path: &Path,
    expansion: &ChaosExpansion,
    w: &WeightingMatrix,
) -> Result<()> {
    let basis = expansion.pair_basis();
    let coeffs = (0..expansion.n_terms()).map(|k| expansion.coeff(k).to_vec());
    write_coefficient_stems_csv(path, basis.indices(), coeffs, w)
}

/// Stems of a flux expansion over the reduced variables.
pub fn write_flux_stems_csv(
    path: &Path,
    expansion: &MixedExpansion,
    w: &WeightingMatrix,
) -> Result<()> {
    let basis = expansion.joint_basis();
    let coeffs = (0..expansion.n_terms()).map(|k| expansion.coeff(k).to_vec());
    write_coefficient_stems_csv(path, basis.indices(), coeffs, w)
}

/// Variance split table for the temperature and the flux: percentages per
/// input block.
pub fn write_sensitivity_csv(
    path: &Path,
    t: &VarianceFractions,
    phi: &VarianceFractions,
) -> Result<()> {
    let header = vec![
        "field".into(),
        "var_xi_pct".into(),
        "var_zeta_pct".into(),
        "var_mixed_pct".into(),
    ];
    let row = |name: &str, f: &VarianceFractions| {
        vec![
            name.to_string(),
            format_f64(100.0 * f.xi_only),
            format_f64(100.0 * f.zeta_only),
            format_f64(100.0 * f.mixed),
        ]
    };
    write_csv(path, None, &header, &[row("temperature", t), row("flux", phi)])
}

/// Number of surrogate draws behind the reduced-variable histogram.
pub const ETA_HISTOGRAM_SAMPLES: usize = 100_000;

/// Joint histogram of the first two reduced variables (or a 1D histogram
/// when only one mode exists), from uniform surrogate draws.
pub fn write_eta_histogram_csv(
    path: &Path,
    reduced: &ReducedExpansion,
    bins: usize,
    seed: u64,
) -> Result<()> {
    if reduced.d() == 0 {
        return Err(Error::Degenerate(
            "reduced expansion has no modes: no joint density to tabulate".into(),
        ));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("histogram needs >= 2 bins, got {bins}")));
    }
    let pair = reduced.d() >= 2;
    let basis = reduced.eta_basis();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws: Vec<(f64, f64)> = Vec::with_capacity(ETA_HISTOGRAM_SAMPLES);
    for _ in 0..ETA_HISTOGRAM_SAMPLES {
        let xi: Vec<f64> =
            (0..reduced.xi_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta = reduced.eta_from_basis_values(&basis.eval_all(&xi)?);
        draws.push((eta[0], if pair { eta[1] } else { 0.0 }));
    }
    let min_max = |get: &dyn Fn(&(f64, f64)) -> f64| -> (f64, f64) {
        draws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(get(d)), hi.max(get(d)))
        })
    };
    let (x_lo, x_hi) = min_max(&|d| d.0);
    let (y_lo, y_hi) = if pair { min_max(&|d| d.1) } else { (0.0, 1.0) };
    let x_w = ((x_hi - x_lo) / bins as f64).max(f64::MIN_POSITIVE);
    let y_w = ((y_hi - y_lo) / bins as f64).max(f64::MIN_POSITIVE);
    let y_bins = if pair { bins } else { 1 };
    let mut counts = vec![0u64; bins * y_bins];
    for &(x, y) in &draws {
        let i = (((x - x_lo) / x_w) as usize).min(bins - 1);
        let j = if pair { (((y - y_lo) / y_w) as usize).min(bins - 1) } else { 0 };
        counts[i * y_bins + j] += 1;
    }
    let header = vec![
        "bin_eta1".into(),
        "bin_eta2".into(),
        "eta1_center".into(),
        "eta2_center".into(),
        "count".into(),
    ];
    let mut rows = Vec::with_capacity(counts.len());
    for i in 0..bins {
        for j in 0..y_bins {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                format_f64(x_lo + (i as f64 + 0.5) * x_w),
                if pair { format_f64(y_lo + (j as f64 + 0.5) * y_w) } else { "0".into() },
                counts[i * y_bins + j].to_string(),
            ]);
        }
    }
    write_csv(
        path,
        Some(&format!("samples={ETA_HISTOGRAM_SAMPLES} seed={seed} modes={}", reduced.d())),
        &header,
        &rows,
    )
}

/// Embedded-rule nodes and weights for every level up to `max_level`, one
/// row per (level, node).
pub fn write_embedded_rules_csv(
    path: &Path,
    measure: &crate::measure::DiscreteMeasure,
    max_level: usize,
) -> Result<()> {
    let mut header = vec!["level".into(), "outcome".into()];
    header.extend((1..=measure.dimension()).map(|d| format!("eta_{d}")));
    header.push("weight".into());
    let mut rows = Vec::new();
    for level in 1..=max_level {
        let (rule, report) = crate::measure::embed_rule(measure, level)?;
        let outcome = format!("{:?}", report.outcome);
        for (node, &w) in rule.nodes().iter().zip(rule.weights()) {
            let mut row = vec![level.to_string(), outcome.clone()];
            row.extend(node.iter().map(|&x| format_f64(x)));
            row.push(format_f64(w));
            rows.push(row);
        }
    }
    write_csv(path, None, &header, &rows)
}

/// Writes the four tables of a reduction next to each other:
/// `<stem>_eigenvalues.csv`, `<stem>_mean.csv`, `<stem>_modes.csv`,
/// `<stem>_eta_coeffs.csv`. Returns the created paths.
pub fn write_reduced_tables(
    dir: &Path,
    stem: &str,
    reduced: &ReducedExpansion,
) -> Result<Vec<std::path::PathBuf>> {
    let mut created = Vec::new();

    let p = dir.join(format!("{stem}_eigenvalues.csv"));
    let header = vec!["mode".into(), "lambda".into()];
    let rows: Vec<Vec<String>> = reduced
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &ev)| vec![(j + 1).to_string(), format_f64(ev)])
        .collect();
    write_csv(&p, None, &header, &rows)?;
    created.push(p);

    let p = dir.join(format!("{stem}_mean.csv"));
    let basis = reduced.mean_basis();
    let mut header = vec!["member".into(), "index".into()];
    header.extend((0..reduced.value_dim()).map(|i| format!("c_{i}")));
    let rows: Vec<Vec<String>> = basis
        .indices()
        .iter()
        .zip(&reduced.mean_part)
        .enumerate()
        .map(|(k, (idx, c))| {
            let mut row = vec![k.to_string(), index_label(idx)];
            row.extend(c.iter().map(|&v| format_f64(v)));
            row
        })
        .collect();
    write_csv(&p, None, &header, &rows)?;
    created.push(p);

    let p = dir.join(format!("{stem}_modes.csv"));
    let basis = reduced.vector_basis();
    let mut header = vec!["mode".into(), "member".into(), "index".into()];
    header.extend((0..reduced.value_dim()).map(|i| format!("c_{i}")));
    let mut rows = Vec::new();
    for (j, mode) in reduced.basis_vectors.iter().enumerate() {
        for (k, (idx, c)) in basis.indices().iter().zip(mode).enumerate() {
            let mut row = vec![(j + 1).to_string(), k.to_string(), index_label(idx)];
            row.extend(c.iter().map(|&v| format_f64(v)));
            rows.push(row);
        }
    }
    write_csv(&p, None, &header, &rows)?;
    created.push(p);

    let p = dir.join(format!("{stem}_eta_coeffs.csv"));
    write_eta_coeffs_csv(&p, reduced)?;
    created.push(p);

    Ok(created)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{reduce, ModeSelector};
    use crate::quadrature::{smolyak_rule, tensor_gauss_legendre, GrowthRule};

    #[test]
    fn float_formatting_round_trips() {
        for &v in &[
            0.0,
            -0.0,
            1.5,
            610.5882352941176,
            2.0854061952874127e14,
            -1.057e-3,
            f64::MIN_POSITIVE,
        ] {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s}");
            assert!(!s.starts_with("-0") || back != 0.0, "negative zero leaked: {s}");
        }
    }

    #[test]
    fn rule_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rule.csv");
        let rule = smolyak_rule(3, 3, GrowthRule::Exponential).unwrap();
        let meta = RuleMeta {
            dimension: 3,
            level: 3,
            growth: "exponential".into(),
            exactness_degree: 5,
        };
        write_rule_csv(&path, &rule, &meta).unwrap();
        let (back, back_meta) = read_rule_csv(&path).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.len(), rule.len());
        for (a, b) in back.nodes().iter().zip(rule.nodes()) {
            assert_eq!(a, b);
        }
        for (a, b) in back.weights().iter().zip(rule.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // A rewrite of the re-read rule is byte-identical.
        let path2 = dir.path().join("rule2.csv");
        write_rule_csv(&path2, &back, &back_meta).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn rule_csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "# dimension=2 level=1 growth=tensor exactness_degree=1\n\
             node_1,node_2,weight\n0,0,1\noops,0,0.5\n",
        )
        .unwrap();
        let err = read_rule_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":4:"), "line number missing: {msg}");
        assert!(msg.contains("oops"), "offending token missing: {msg}");
    }

    #[test]
    fn convergence_and_sensitivity_files_have_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            IterationRecord {
                ell: 1,
                d: 0,
                q: 2,
                eigenvalues: vec![],
                t_update: 0.0,
                phi_update: 1.0,
                heat_nodes: 10,
                neutronics_nodes: 9,
            },
            IterationRecord {
                ell: 2,
                d: 2,
                q: 2,
                eigenvalues: vec![3.0, 1.0],
                t_update: 0.5,
                phi_update: 0.25,
                heat_nodes: 10,
                neutronics_nodes: 20,
            },
        ];
        let p = dir.path().join("conv.csv");
        write_convergence_csv(&p, &records).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("iteration,d,q,"));
        assert!(text.contains("\n2,2,2,0.5,0.25,10,20\n"));

        let p = dir.path().join("spec.csv");
        write_spectrum_history_csv(&p, &records).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3); // header + two modes of iter 2
        assert!(text.contains("2,1,3"));

        let p = dir.path().join("sens.csv");
        let t = VarianceFractions { xi_only: 0.5545, zeta_only: 0.444, mixed: 0.0015 };
        let f = VarianceFractions { xi_only: 0.0215, zeta_only: 0.9783, mixed: 0.0002 };
        write_sensitivity_csv(&p, &t, &f).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("temperature,55.45,44.4,0.15"), "{text}");
        assert!(text.contains("flux,2.15,97.83,"), "{text}");
    }

    fn demo_reduction() -> ReducedExpansion {
        let mut q = ChaosExpansion::zeros(2, 1, 2, 3);
        q.coeff_mut(0).copy_from_slice(&[5.0, 6.0, 7.0]);
        q.coeff_mut(1).copy_from_slice(&[1.0, 0.4, -0.2]);
        q.coeff_mut(2).copy_from_slice(&[0.3, -0.8, 0.5]);
        q.coeff_mut(3).copy_from_slice(&[0.1, 0.2, 0.05]);
        let w = WeightingMatrix::identity(3);
        reduce(&q, &w, ModeSelector::FixedCount(2)).unwrap()
    }

    #[test]
    fn reduced_tables_and_eta_histogram_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let reduced = demo_reduction();
        let files = write_reduced_tables(dir.path(), "t_reduced", &reduced).unwrap();
        assert_eq!(files.len(), 4);
        for f in &files {
            assert!(f.exists(), "{f:?}");
            let text = fs::read_to_string(f).unwrap();
            assert!(text.lines().count() >= 2, "{f:?} empty");
        }
        let h1 = dir.path().join("hist1.csv");
        let h2 = dir.path().join("hist2.csv");
        write_eta_histogram_csv(&h1, &reduced, 8, 42).unwrap();
        write_eta_histogram_csv(&h2, &reduced, 8, 42).unwrap();
        assert_eq!(fs::read(&h1).unwrap(), fs::read(&h2).unwrap());
        let text = fs::read_to_string(&h1).unwrap();
        let total: u64 = text
            .lines()
            .skip(2)
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, ETA_HISTOGRAM_SAMPLES as u64);
    }

    #[test]
    fn kl_and_family_tables_write() {
        use crate::field::{kl_decompose, FieldSpec};
        use crate::measure::{build_reduced_basis, pushforward_measure};
        use crate::mesh::FeMesh;
        let dir = tempfile::tempdir().unwrap();
        let spec = FieldSpec { mean: 1.0, cov: 0.1, corr_length: 15.0, n_terms: 4 };
        let mesh = FeMesh::new(100.0, 10).unwrap();
        let kl = kl_decompose(&spec, &mesh).unwrap();
        let p1 = dir.path().join("ev.csv");
        let p2 = dir.path().join("ef.csv");
        write_kl_eigenvalues_csv(&p1, &kl).unwrap();
        write_kl_eigenfunctions_csv(&p2, &kl).unwrap();
        let ev = fs::read_to_string(&p1).unwrap();
        assert_eq!(ev.lines().count(), 5);
        let ef = fs::read_to_string(&p2).unwrap();
        assert!(ef.starts_with("x_cm,phi_1,phi_2,phi_3,phi_4"));
        assert_eq!(ef.lines().count(), 12);

        let src = tensor_gauss_legendre(2, 4).unwrap();
        let measure = pushforward_measure(&src, 2, |x| x.to_vec()).unwrap();
        let family = build_reduced_basis(&measure, 2).unwrap();
        let p3 = dir.path().join("family.csv");
        write_family_csv(&p3, &family).unwrap();
        let text = fs::read_to_string(&p3).unwrap();
        assert!(text.starts_with("member,m_0;0,"), "{text}");
        assert_eq!(text.lines().count(), 7); // 6 members of degree <= 2
    }
}
