use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use subjlab_core::corpus::SplitPart;
use subjlab_core::Corpus;

use crate::config::ExperimentConfig;
use crate::prepare::load_prepared;
use crate::train::{load_seed, selected_values, split_for, Trained};
use crate::{create_tagged, seed_dir};

pub fn label_word(bit: u8) -> &'static str {
    if bit == 1 {
        "subjective"
    } else {
        "non-subjective"
    }
}

/// Scores on the two leading principal components, `[n, 2]`.
///
/// Each component is oriented so its largest-magnitude loading is
/// positive, which keeps the output stable across runs.
pub fn principal_components(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, 2));
    if n < 2 || d == 0 {
        return out;
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let cov = (m.transpose() * &m) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.neg_mut();
        }
        for i in 0..n {
            out[[i, c]] = (0..d).map(|j| centered[[i, j]] * v[j]).sum();
        }
    }
    out
}

fn resolve_value(corpus: &Corpus, selected: &[usize], value: Option<&str>) -> Result<usize> {
    let names = corpus.value_selection().names();
    let Some(value) = value else {
        return selected.first().copied().context("no value selected");
    };
    if let Some(i) = names.iter().position(|n| n == value) {
        return Ok(i);
    }
    match value.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => bail!("unknown value {value:?} (have {names:?})"),
    }
}

/// Writes `argument_id`, label word, the embedding and two projection
/// columns for the chosen split part. Uses the first configured seed.
pub fn run(cfg: &ExperimentConfig, part: SplitPart, value: Option<&str>, output: Option<&Path>) -> Result<PathBuf> {
    let corpus = load_prepared(cfg)?;
    let selected = selected_values(cfg, &corpus)?;
    let v = resolve_value(&corpus, &selected, value)?;
    let s = cfg.split.seeds[0];
    let (_, trained) = load_seed(cfg, s)?;
    let split = split_for(cfg, &corpus, s)?;
    let index = corpus.id_index();
    let rows: Vec<usize> = split
        .ids(part)
        .iter()
        .map(|id| index.get(id.as_str()).copied().with_context(|| format!("unknown id {id}")))
        .collect::<Result<_>>()?;
    let texts: Vec<String> = rows.iter().map(|&i| corpus.texts()[i].clone()).collect();
    let emb = match &trained {
        Trained::Ds(models) => models
            .iter()
            .find(|m| m.value_index == v)
            .with_context(|| format!("no trained model for value {}", corpus.value_selection().names()[v]))?
            .embed(&texts)?,
        Trained::Is(bundle) => bundle.states[0].embed(&texts)?,
    };
    let proj = principal_components(&emb);

    let path = match output {
        Some(p) => p.to_path_buf(),
        None => seed_dir(cfg, s)?.join("embeddings.tsv"),
    };
    let mut w = create_tagged(&path, &cfg.hash())?;
    let mut header = vec!["argument_id".to_string(), "label".to_string()];
    header.extend((0..emb.ncols()).map(|j| format!("e{j}")));
    header.extend(["pc1".to_string(), "pc2".to_string()]);
    writeln!(w, "{}", header.join("\t"))?;
    for (r, &i) in rows.iter().enumerate() {
        let mut fields = vec![corpus.argument_ids()[i].clone(), label_word(corpus.subjectivity()[[i, v]]).into()];
        fields.extend(emb.row(r).iter().map(f64::to_string));
        fields.extend(proj.row(r).iter().map(f64::to_string));
        writeln!(w, "{}", fields.join("\t"))?;
    }
    w.flush()?;
    log::info!("wrote {} embeddings to {}", rows.len(), path.display());
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn projects_onto_the_dominant_axis() {
        let x = array![[-2.0, 0.1, 5.0], [0.0, -0.1, 5.0], [2.0, 0.0, 5.0], [4.0, 0.05, 5.0]];
        let p = principal_components(&x);
        let expected = [-3.0, -1.0, 1.0, 3.0];
        for (i, e) in expected.iter().enumerate() {
            assert!((p[[i, 0]] - e).abs() < 0.01, "{p}");
        }
        assert!(p.column(1).iter().all(|v| v.abs() < 0.2));
        assert_eq!(p, principal_components(&x));
    }

    #[test]
    fn degenerate_inputs_give_zeros() {
        assert_eq!(principal_components(&array![[1.0, 2.0]]), Array2::<f64>::zeros((1, 2)));
        let one_dim = principal_components(&array![[1.0], [3.0]]);
        assert_eq!(one_dim.column(1).to_vec(), vec![0.0, 0.0]);
        assert!((one_dim[[0, 0]] + 1.0).abs() < 1e-12);
    }
}
