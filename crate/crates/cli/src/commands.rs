use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use redense::data::{
    load_feature_bundle, FeatureBundle, META_BASE_LOSS, META_BASE_TRAIN_LOSS, META_OLD_LOSS, META_SOURCE_MODEL,
};
use redense::linalg::RngSeed;
use redense::nn::{evaluate_logits, train_base_observed, Dataset, Evaluation, Loss, MlpModel, TrainConfig};
use redense::persist::{load_model, write_curve, CurveRow, ModelFile};
use redense::redense::{train_with, RedenseFit, RedenseLayer, TrainOptions, TRAINING_LOSS};

use crate::args::{Command, EvalArgs, FeaturesArgs, HeadArgs, RedenseArgs, SweepArgs, TrainArgs};
use crate::load::load_splits;
use crate::manifest::RunManifest;
use crate::{CliError, Output};

pub const MODEL_FILE: &str = "model.rdnm";
pub const REDENSE_MODEL: &str = "model-redense.rdnm";
pub const HEAD_FILE: &str = "head.rdnm";
pub const TRAIN_CURVE: &str = "train-curve.csv";
pub const REDENSE_CURVE: &str = "redense-curve.csv";
pub const SWEEP_FILE: &str = "sweep-m.csv";
pub const BUNDLE_TRAIN: &str = "train.rdfb";
pub const BUNDLE_VALIDATION: &str = "validation.rdfb";
pub const BUNDLE_TEST: &str = "test.rdfb";

const INIT_STREAM: u64 = 0x494e4954;

pub(crate) fn dispatch(cmd: &Command, argv: Vec<String>, out: &mut Output) -> Result<(), CliError> {
    let flags = serde_json::to_value(cmd).expect("flags serialize");
    let mut manifest = RunManifest::new(cmd.name(), argv, flags, cmd.seed());
    match cmd {
        Command::Train(a) => cmd_train(a, &mut manifest, out),
        Command::Features(a) => cmd_features(a, &mut manifest, out),
        Command::Redense(a) => cmd_redense(a, &mut manifest, out),
        Command::SweepM(a) => cmd_sweep_m(a, &mut manifest, out),
        Command::Eval(a) => cmd_eval(a, &mut manifest, out),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn put_eval(out: &mut Output, manifest: &mut RunManifest, prefix: &str, e: &Evaluation) {
    out.put(format!("{prefix}_loss"), e.loss);
    out.put(format!("{prefix}_accuracy"), e.accuracy);
    manifest.metrics.insert(format!("{prefix}_loss"), e.loss);
    manifest.metrics.insert(format!("{prefix}_accuracy"), e.accuracy);
}

fn cmd_train(a: &TrainArgs, manifest: &mut RunManifest, out: &mut Output) -> Result<(), CliError> {
    if a.hidden.contains(&0) {
        return Err(CliError::Usage("--hidden widths must be positive".into()));
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        weight_decay: a.weight_decay,
        optimizer: a.optimizer.into(),
        seed: RngSeed(a.seed),
    };
    cfg.validate()?;
    let splits = load_splits(&a.data)?;
    let (train, test) = (&splits.train, &splits.test);
    let init = MlpModel::init(
        train.inputs.cols(),
        &a.hidden,
        a.activation,
        train.classes(),
        RngSeed(a.seed).derive(INIT_STREAM),
    )?;

    let mut held_out = Vec::with_capacity(a.epochs + 1);
    let (model, curve) = train_base_observed(&init, train, a.loss, &cfg, |_, m| {
        held_out.push(m.evaluate(&test.inputs, &test.targets, a.loss).ok());
    })?;

    create_dir(&a.out_dir)?;
    let rows: Vec<CurveRow> = curve
        .iter()
        .zip(&held_out)
        .map(|(c, t)| CurveRow {
            epoch: c.epoch,
            train_loss: c.train_loss,
            test_loss: t.as_ref().map(|e| e.loss),
            test_accuracy: t.as_ref().map(|e| e.accuracy),
        })
        .collect();
    let curve_path = a.out_dir.join(TRAIN_CURVE);
    write_curve(&curve_path, &rows)?;
    manifest.record("curve", &curve_path)?;

    let file = ModelFile {
        network: Some(model),
        loss: a.loss,
        redense: None,
    };
    let model_path = a.out_dir.join(MODEL_FILE);
    manifest.write_output("model", &model_path, &file.to_bytes()?)?;
    let model = file.network.as_ref().expect("just set");

    out.put("loss_kind", a.loss);
    out.put("parameters", model.parameter_count());
    put_eval(
        out,
        manifest,
        "train",
        &model.evaluate(&train.inputs, &train.targets, a.loss)?,
    );
    if let Some(v) = &splits.validation {
        put_eval(
            out,
            manifest,
            "validation",
            &model.evaluate(&v.inputs, &v.targets, a.loss)?,
        );
    }
    put_eval(
        out,
        manifest,
        "test",
        &model.evaluate(&test.inputs, &test.targets, a.loss)?,
    );
    out.put("parameters_sha256", &manifest.sha256["model"]);
    out.put("model", model_path.display());
    out.put("curve", curve_path.display());
    out.put("manifest", manifest.save(&a.out_dir)?.display());
    Ok(())
}

/// Folds the output bias into the features (`[ŷ, 1]`, `[Ô | b]`) and records
/// the base losses, so the head reproduces the network's logits exactly.
pub fn bundle_from_model(
    model: &MlpModel,
    loss: Loss,
    data: &Dataset,
    source: &str,
) -> Result<FeatureBundle, CliError> {
    let base = model.evaluate(&data.inputs, &data.targets, loss)?;
    let features = model.folded_features(&data.inputs)?;
    let weight = model.folded_output_weight();
    let old_loss = TRAINING_LOSS.value(&features.matmul_transposed(&weight)?, &data.targets)?;
    let metadata = BTreeMap::from([
        (META_BASE_LOSS.to_string(), loss.to_string()),
        (META_BASE_TRAIN_LOSS.to_string(), base.loss.to_string()),
        (META_OLD_LOSS.to_string(), old_loss.to_string()),
        (META_SOURCE_MODEL.to_string(), source.to_string()),
    ]);
    Ok(FeatureBundle::new(features, data.targets.clone(), weight, metadata)?)
}

fn cmd_features(a: &FeaturesArgs, manifest: &mut RunManifest, out: &mut Output) -> Result<(), CliError> {
    let file = load_model(&a.model)?;
    let net = file.network.as_ref().ok_or_else(|| {
        CliError::Data(format!(
            "{}: model has no network to extract features from",
            a.model.display()
        ))
    })?;
    let splits = load_splits(&a.data)?;
    create_dir(&a.out_dir)?;
    let source = a.model.display().to_string();
    let parts = [
        ("train", BUNDLE_TRAIN, Some(&splits.train)),
        ("validation", BUNDLE_VALIDATION, splits.validation.as_ref()),
        ("test", BUNDLE_TEST, Some(&splits.test)),
    ];
    for (key, name, data) in parts {
        let Some(data) = data else { continue };
        let bundle = bundle_from_model(net, file.loss, data, &source)?;
        let path = a.out_dir.join(name);
        manifest.write_output(&format!("{key}_bundle"), &path, &bundle.to_bytes())?;
        let (j, n, q) = bundle.dims();
        out.put(format!("{key}_bundle"), path.display());
        out.put(format!("{key}_samples"), j);
        out.put(format!("{key}_base_loss"), &bundle.metadata[META_BASE_TRAIN_LOSS]);
        out.put(format!("{key}_old_loss"), &bundle.metadata[META_OLD_LOSS]);
        if key == "train" {
            out.put("n", n);
            out.put("classes", q);
        }
    }
    out.put("manifest", manifest.save(&a.out_dir)?.display());
    Ok(())
}

fn load_bundles(h: &HeadArgs) -> Result<(FeatureBundle, Option<FeatureBundle>), CliError> {
    let train = load_feature_bundle(&h.bundle)?;
    let test = h.test_bundle.as_ref().map(load_feature_bundle).transpose()?;
    if let Some(t) = &test {
        let (_, n, q) = train.dims();
        let (_, tn, tq) = t.dims();
        if (tn, tq) != (n, q) {
            return Err(CliError::Data(format!(
                "test bundle has n = {tn}, Q = {tq}; training bundle has n = {n}, Q = {q}"
            )));
        }
    }
    Ok((train, test))
}

fn base_loss_of(bundle: &FeatureBundle) -> Result<Loss, CliError> {
    match bundle.metadata.get(META_BASE_LOSS) {
        Some(s) => s
            .parse()
            .map_err(|e| CliError::Data(format!("bundle metadata {META_BASE_LOSS}: {e}"))),
        None => Ok(TRAINING_LOSS),
    }
}

fn fit_head(
    bundle: &FeatureBundle,
    test: Option<&FeatureBundle>,
    m: usize,
    seed: u64,
    h: &HeadArgs,
    base_loss: Loss,
) -> Result<RedenseFit, CliError> {
    let (j, n, _) = bundle.dims();
    let layer = RedenseLayer::build(&bundle.output_weight, n, m, RngSeed(seed))?;
    let cfg = TrainConfig {
        learning_rate: h.lr,
        epochs: h.epochs,
        batch_size: h.batch.unwrap_or(j),
        weight_decay: 0.0,
        optimizer: h.optimizer.into(),
        seed: RngSeed(seed),
    };
    let opts = TrainOptions {
        base_loss,
        test: test.map(|t| (&t.features, &t.targets)),
    };
    Ok(train_with(&layer, &bundle.features, &bundle.targets, &cfg, &opts)?)
}

fn check_width(n: usize, m: usize) -> Result<(), CliError> {
    if m < n {
        return Err(redense::Error::WidthConstraint { n, m }.into());
    }
    Ok(())
}

/// The recorded base loss a ReDense head must not exceed: the fit's own
/// `old_loss`, and the bundle's `old_loss` metadata when present.
fn guarantee_violation(bundle: &FeatureBundle, fit: &RedenseFit) -> Option<String> {
    let r = &fit.report;
    if !r.guarantee_holds {
        return Some(format!("final_loss {} exceeds old_loss {}", r.final_loss, r.old_loss));
    }
    let recorded = bundle.metadata.get(META_OLD_LOSS).and_then(|v| v.parse::<f64>().ok())?;
    if r.final_loss > recorded {
        return Some(format!(
            "final_loss {} exceeds recorded old_loss {recorded}",
            r.final_loss
        ));
    }
    None
}

fn cmd_redense(a: &RedenseArgs, manifest: &mut RunManifest, out: &mut Output) -> Result<(), CliError> {
    let (bundle, test) = load_bundles(&a.head)?;
    let (_, n, q) = bundle.dims();
    let m = a.m.unwrap_or(n);
    check_width(n, m)?;

    let base = match &a.model {
        Some(path) => {
            let file = load_model(path)?;
            let net = file
                .network
                .as_ref()
                .ok_or_else(|| CliError::Data(format!("{}: model has no network to extend", path.display())))?;
            if !(n == net.feature_dim() + 1 || n == net.feature_dim()) || q != net.output_dim() {
                return Err(CliError::Data(format!(
                    "bundle (n = {n}, Q = {q}) does not match model features (n = {}, Q = {})",
                    net.feature_dim(),
                    net.output_dim()
                )));
            }
            if file.redense.is_some() {
                log::warn!("{}: replacing the existing ReDense block", path.display());
            }
            Some(file)
        }
        None => None,
    };

    let base_loss = base_loss_of(&bundle)?;
    let fit = fit_head(&bundle, test.as_ref(), m, a.seed, &a.head, base_loss)?;
    if let Some(epoch) = fit.report.aborted_at {
        log::warn!("non-finite loss at epoch {epoch}; returning the best iterate before it");
    }

    create_dir(&a.out_dir)?;
    let rows: Vec<CurveRow> = fit
        .curve
        .iter()
        .map(|e| CurveRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            test_loss: e.test_loss,
            test_accuracy: e.test_accuracy,
        })
        .collect();
    let curve_path = a.out_dir.join(REDENSE_CURVE);
    write_curve(&curve_path, &rows)?;
    manifest.record("curve", &curve_path)?;

    let (file, name) = match base {
        Some(mut f) => {
            f.redense = Some(fit.layer.clone());
            (f, REDENSE_MODEL)
        }
        None => (
            ModelFile {
                network: None,
                loss: base_loss,
                redense: Some(fit.layer.clone()),
            },
            HEAD_FILE,
        ),
    };
    let model_path = a.out_dir.join(name);
    manifest.write_output("model", &model_path, &file.to_bytes()?)?;

    out.put("n", n);
    out.put("m", m);
    for (k, v) in fit.report.key_values() {
        out.put(k, v);
    }
    if let Some(t) = &test {
        let before = evaluate_logits(&fit.layer.base_logits(&t.features)?, &t.targets, TRAINING_LOSS)?;
        let after = evaluate_logits(&fit.layer.predict(&t.features)?, &t.targets, TRAINING_LOSS)?;
        put_eval(out, manifest, "base_test", &before);
        put_eval(out, manifest, "redense_test", &after);
        out.put("test_accuracy_delta", after.accuracy - before.accuracy);
    }
    manifest.metrics.insert("old_loss".into(), fit.report.old_loss);
    manifest.metrics.insert("final_loss".into(), fit.report.final_loss);
    manifest.report = Some(fit.report);
    out.put("model", model_path.display());
    out.put("curve", curve_path.display());
    out.put("manifest", manifest.save(&a.out_dir)?.display());

    match guarantee_violation(&bundle, &fit) {
        Some(msg) => Err(CliError::Guarantee(msg)),
        None => Ok(()),
    }
}

/// Resolves a width token: a plain integer, `n`, or a multiple such as `2n`.
pub fn parse_width(token: &str, n: usize) -> Result<usize, CliError> {
    let t = token.trim();
    let bad = || CliError::Usage(format!("invalid width {token:?}: expected an integer, `n`, or `<k>n`"));
    match t.strip_suffix('n') {
        Some("") => Ok(n),
        Some(k) => k.parse::<usize>().map_err(|_| bad())?.checked_mul(n).ok_or_else(bad),
        None => t.parse().map_err(|_| bad()),
    }
}

struct SweepRow {
    m: usize,
    seed: u64,
    epsilon: f64,
    final_train_loss: f64,
    test_accuracy: Option<f64>,
    violation: Option<String>,
}

fn cmd_sweep_m(a: &SweepArgs, manifest: &mut RunManifest, out: &mut Output) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let (bundle, test) = load_bundles(&a.head)?;
    let (_, n, _) = bundle.dims();
    let widths = a.m.iter().map(|t| parse_width(t, n)).collect::<Result<Vec<_>, _>>()?;
    for &m in &widths {
        check_width(n, m)?;
    }
    let base_loss = base_loss_of(&bundle)?;

    let jobs: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&m| (0..a.seeds).map(move |i| (m, a.seed + i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(m, seed)| -> Result<SweepRow, CliError> {
            let fit = fit_head(&bundle, test.as_ref(), m, seed, &a.head, base_loss)?;
            let test_accuracy = match &test {
                Some(t) => Some(evaluate_logits(&fit.layer.predict(&t.features)?, &t.targets, TRAINING_LOSS)?.accuracy),
                None => None,
            };
            Ok(SweepRow {
                m,
                seed,
                epsilon: fit.report.epsilon,
                final_train_loss: fit.report.final_loss,
                test_accuracy,
                violation: guarantee_violation(&bundle, &fit),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("m,seed,epsilon,final_train_loss,test_accuracy\n");
    for r in &rows {
        let acc = r.test_accuracy.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(
            csv,
            "{},{},{:.16e},{:.16e},{acc}",
            r.m, r.seed, r.epsilon, r.final_train_loss
        )
        .expect("string write");
    }
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join(SWEEP_FILE);
    manifest.write_output("sweep", &path, csv.as_bytes())?;

    out.put("n", n);
    out.put("rows", rows.len());
    let mut seen = Vec::new();
    for &m in &widths {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.m == m).collect();
        let mean = |f: &dyn Fn(&SweepRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
        let eps = mean(&|r| r.epsilon);
        let loss = mean(&|r| r.final_train_loss);
        out.put(format!("mean_epsilon_m{m}"), eps);
        out.put(format!("mean_final_train_loss_m{m}"), loss);
        manifest.metrics.insert(format!("mean_epsilon_m{m}"), eps);
        manifest.metrics.insert(format!("mean_final_train_loss_m{m}"), loss);
        if test.is_some() {
            let acc = mean(&|r| r.test_accuracy.unwrap_or(f64::NAN));
            out.put(format!("mean_test_accuracy_m{m}"), acc);
            manifest.metrics.insert(format!("mean_test_accuracy_m{m}"), acc);
        }
    }
    let violations: Vec<&SweepRow> = rows.iter().filter(|r| r.violation.is_some()).collect();
    out.put("violations", violations.len());
    out.put("table", path.display());
    out.put("manifest", manifest.save(&a.out_dir)?.display());

    match violations.first() {
        Some(r) => Err(CliError::Guarantee(format!(
            "m = {}, seed = {}: {}",
            r.m,
            r.seed,
            r.violation.as_deref().unwrap_or_default()
        ))),
        None => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs, manifest: &mut RunManifest, out: &mut Output) -> Result<(), CliError> {
    let file = load_model(&a.model)?;
    let head = file.redense.as_ref();

    let (base, redense) = match &a.bundle {
        Some(path) => {
            let layer = head.ok_or_else(|| CliError::Usage("--bundle needs a model with a ReDense block".into()))?;
            let b = load_feature_bundle(path)?;
            if b.features.cols() != layer.n() || b.targets.cols() != layer.classes() {
                return Err(CliError::Data(format!(
                    "bundle (n = {}, Q = {}) does not match the ReDense block (n = {}, Q = {})",
                    b.features.cols(),
                    b.targets.cols(),
                    layer.n(),
                    layer.classes()
                )));
            }
            out.put("loss_kind", TRAINING_LOSS);
            out.put("samples", b.features.rows());
            let base = evaluate_logits(&layer.base_logits(&b.features)?, &b.targets, TRAINING_LOSS)?;
            let red = evaluate_logits(&layer.predict(&b.features)?, &b.targets, TRAINING_LOSS)?;
            (base, Some(red))
        }
        None => {
            let net = file
                .network
                .as_ref()
                .ok_or_else(|| CliError::Usage("model has no network; evaluate it with --bundle".into()))?;
            let splits = load_splits(&a.data)?;
            let d = splits.get(a.split)?;
            out.put("loss_kind", file.loss);
            out.put("samples", d.len());
            let base = net.evaluate(&d.inputs, &d.targets, file.loss)?;
            let red = match head {
                Some(layer) => {
                    let features = if layer.n() == net.feature_dim() + 1 {
                        net.folded_features(&d.inputs)?
                    } else {
                        net.extract_features(&d.inputs)?
                    };
                    let base_ce = net.evaluate(&d.inputs, &d.targets, TRAINING_LOSS)?;
                    out.put("base_ce_loss", base_ce.loss);
                    manifest.metrics.insert("base_ce_loss".into(), base_ce.loss);
                    Some(evaluate_logits(&layer.predict(&features)?, &d.targets, TRAINING_LOSS)?)
                }
                None => None,
            };
            (base, red)
        }
    };

    out.put("columns", if redense.is_some() { "base,redense" } else { "base" });
    put_eval(out, manifest, "base", &base);
    if let Some(r) = &redense {
        put_eval(out, manifest, "redense", r);
        out.put("accuracy_delta", r.accuracy - base.accuracy);
    }
    create_dir(&a.out_dir)?;
    out.put("manifest", manifest.save(&a.out_dir)?.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_tokens() {
        assert_eq!(parse_width("n", 65).unwrap(), 65);
        assert_eq!(parse_width("2n", 65).unwrap(), 130);
        assert_eq!(parse_width(" 100 ", 65).unwrap(), 100);
        assert!(parse_width("xn", 65).is_err());
        assert!(parse_width("", 65).is_err());
        assert!(parse_width("-1", 65).is_err());
    }
}
