//! Multi-seed experiment execution.
//!
//! Every (method, seed) pair trains on the same per-seed splits. Seeds run
//! independently (on the rayon pool with the `parallel` feature) and their
//! outputs are assembled in a fixed order, so the written files are
//! byte-identical across reruns. A failed seed is recorded and excluded
//! from the aggregates; the run carries on.

use crate::config::{Method, RunConfig};
use crate::metrics::{
    mean_std, mean_std_opt, write_jsonl, write_summary, ManipStats, MethodSummary, MetricsRecord,
    Summary, TimingRecord, METRICS_FILE, SUMMARY_FILE, TIMING_FILE,
};
use crate::HarnessError;
use manip_core::augment::{augment_continuous, augment_discrete_relaxed, harden, sample_gumbel, AugmentParams};
use manip_core::data::{merge, Dataset, Splits};
use manip_core::model::ClassifierParams;
use manip_core::reward::{DataReward, Normalization, WeightTable};
use manip_core::rng;
use manip_core::tensor::Tensor;
use manip_core::trainer::{
    baseline_proportion_weights, train_joint_augmented, train_ren, StepReport, TrainRun,
};
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Everything one (method, seed) training produced.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub records: Vec<MetricsRecord>,
    pub timings: Vec<TimingRecord>,
    /// Test accuracy the run reports: the selected checkpoint for
    /// validation-selected methods, the last epoch for fixed-budget ones.
    pub final_test_accuracy: f64,
    pub selected_epoch: usize,
    pub weight_table: Option<WeightTable>,
    pub augmenter: Option<AugmentParams>,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub outcomes: Vec<(Method, std::result::Result<MethodOutcome, String>)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub records: Vec<MetricsRecord>,
    pub seed_results: Vec<SeedResult>,
}

impl RunOutput {
    /// Successful outcomes of one method across seeds, in seed order.
    pub fn method_outcomes(&self, method: Method) -> Vec<(u64, &MethodOutcome)> {
        self.seed_results
            .iter()
            .flat_map(|s| {
                s.outcomes
                    .iter()
                    .filter(move |(m, _)| *m == method)
                    .filter_map(move |(_, r)| r.as_ref().ok().map(|o| (s.seed, o)))
            })
            .collect()
    }

    pub fn method_summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.methods.iter().find(|m| m.name == method.name())
    }

    pub fn all_failed(&self) -> bool {
        self.seed_results
            .iter()
            .all(|s| s.outcomes.iter().all(|(_, r)| r.is_err()))
    }
}

struct EpochCollector<'a> {
    run_id: &'a str,
    method: &'a str,
    seed: u64,
    test_x: Tensor,
    test_y: Vec<usize>,
    /// Fixed-budget methods report the latest epoch instead of the best one.
    select_by_validation: bool,
    best: Option<(f64, f64)>,
    best_test: f64,
    records: Vec<MetricsRecord>,
    timings: Vec<TimingRecord>,
    mark: Instant,
    error: Option<HarnessError>,
}

impl<'a> EpochCollector<'a> {
    fn new(
        run_id: &'a str,
        method: &'a str,
        seed: u64,
        test: &Dataset,
        select_by_validation: bool,
    ) -> Result<Self> {
        let (test_x, test_y) = test.full_matrix()?;
        Ok(EpochCollector {
            run_id,
            method,
            seed,
            test_x,
            test_y,
            select_by_validation,
            best: None,
            best_test: 0.0,
            records: Vec::new(),
            timings: Vec::new(),
            mark: Instant::now(),
            error: None,
        })
    }

    fn observe(&mut self, params: &ClassifierParams, report: &StepReport) {
        if self.error.is_some() {
            return;
        }
        let wall_ms = self.mark.elapsed().as_secs_f64() * 1e3;
        let test_accuracy = match params.accuracy(&self.test_x, &self.test_y) {
            Ok(a) => a,
            Err(e) => {
                self.error = Some(e.into());
                return;
            }
        };
        if self.select_by_validation {
            // mirror the trainer's checkpoint rule exactly
            let improves = match self.best {
                None => true,
                Some((acc, loss)) => {
                    report.val_accuracy > acc || (report.val_accuracy == acc && report.val_loss < loss)
                }
            };
            if improves {
                self.best = Some((report.val_accuracy, report.val_loss));
                self.best_test = test_accuracy;
            }
        } else {
            self.best_test = test_accuracy;
        }
        self.records.push(MetricsRecord {
            run_id: self.run_id.to_string(),
            method: self.method.to_string(),
            seed: self.seed,
            epoch: report.epoch,
            train_loss: report.train_loss,
            val_loss: report.val_loss,
            val_accuracy: report.val_accuracy,
            test_accuracy,
            selected_test_accuracy: self.best_test,
            manip: ManipStats::from_summary(&report.manip),
        });
        self.timings.push(TimingRecord {
            method: self.method.to_string(),
            seed: self.seed,
            epoch: report.epoch,
            wall_ms,
        });
        self.mark = Instant::now();
    }

    fn finish(self, run: &TrainRun) -> Result<MethodOutcome> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let final_test_accuracy = self
            .records
            .last()
            .map(|r| r.selected_test_accuracy)
            .unwrap_or(0.0);
        let (weight_table, augmenter) = match &run.reward {
            DataReward::Weight(t) => (Some(t.clone()), None),
            DataReward::Augment(a) => (None, Some(a.clone())),
            DataReward::Delta => (None, None),
        };
        Ok(MethodOutcome {
            records: self.records,
            timings: self.timings,
            final_test_accuracy,
            selected_epoch: run.selected_epoch,
            weight_table,
            augmenter,
        })
    }
}

fn run_one_method(
    config: &RunConfig,
    method: Method,
    seed: u64,
    splits: &Splits,
    merged_epochs: Option<usize>,
) -> Result<MethodOutcome> {
    let run_id = config.run_id();
    let kind = config.model.kind();
    let gumbel = config.gumbel_config();
    let mut trainer = config.trainer_config(seed);

    match method {
        Method::Base => {
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, true)?;
            let run = train_joint_augmented(&trainer, &gumbel, kind, splits, DataReward::Delta, |p, r| {
                collector.observe(p, r)
            })?;
            collector.finish(&run)
        }
        Method::BaseMerged => {
            let epochs = merged_epochs
                .ok_or_else(|| HarnessError::Config("base_merged without a base pass".into()))?;
            trainer.epochs = epochs;
            let merged = Splits {
                train: merge(&splits.train, &splits.validation)?,
                // kept only so validation metrics stay comparable; it is part
                // of the training data for this method
                validation: splits.validation.clone(),
                test: splits.test.clone(),
            };
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, false)?;
            let run =
                train_joint_augmented(&trainer, &gumbel, kind, &merged, DataReward::Delta, |p, r| {
                    collector.observe(p, r)
                })?;
            let mut outcome = collector.finish(&run)?;
            // no validation selection here: the fixed budget is the endpoint
            outcome.selected_epoch = epochs;
            Ok(outcome)
        }
        Method::Weight => {
            let table = WeightTable::zeros(
                splits.train.ids().iter().copied(),
                Normalization::Softmax,
            );
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, true)?;
            let run = train_joint_augmented(
                &trainer,
                &gumbel,
                kind,
                splits,
                DataReward::Weight(table),
                |p, r| collector.observe(p, r),
            )?;
            collector.finish(&run)
        }
        Method::Proportion => {
            let table = baseline_proportion_weights(&splits.train);
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, true)?;
            let run = train_joint_augmented(
                &trainer,
                &gumbel,
                kind,
                splits,
                DataReward::Weight(table),
                |p, r| collector.observe(p, r),
            )?;
            collector.finish(&run)
        }
        Method::Ren => {
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, true)?;
            let run = train_ren(&trainer, kind, splits, |p, r| collector.observe(p, r))?;
            collector.finish(&run)
        }
        Method::Augment | Method::AugmentFrozen => {
            let augmenter = config.build_augmenter(splits, seed)?;
            trainer.phi_lr = if method == Method::AugmentFrozen {
                0.0
            } else {
                config.augment_phi_lr()
            };
            let mut collector =
                EpochCollector::new(&run_id, method.name(), seed, &splits.test, true)?;
            let run = train_joint_augmented(
                &trainer,
                &gumbel,
                kind,
                splits,
                DataReward::Augment(augmenter),
                |p, r| collector.observe(p, r),
            )?;
            collector.finish(&run)
        }
    }
}

fn run_seed(config: &RunConfig, seed: u64, methods: &[Method], merged_epochs: Option<usize>) -> SeedResult {
    let splits = match config.build_splits(seed) {
        Ok(s) => s,
        Err(e) => {
            return SeedResult {
                seed,
                outcomes: methods
                    .iter()
                    .map(|&m| (m, Err(format!("split construction failed: {e}"))))
                    .collect(),
            }
        }
    };
    let outcomes = methods
        .iter()
        .map(|&m| {
            let r = run_one_method(config, m, seed, &splits, merged_epochs)
                .map_err(|e| e.to_string());
            (m, r)
        })
        .collect();
    SeedResult { seed, outcomes }
}

/// Run `methods` for every seed, in parallel when the `parallel` feature is
/// enabled. Results come back in seed order either way.
pub fn run_seeds(
    config: &RunConfig,
    seeds: &[u64],
    methods: &[Method],
    merged_epochs: Option<usize>,
) -> Vec<SeedResult> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&s| run_seed(config, s, methods, merged_epochs))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_seeds_sequential(config, seeds, methods, merged_epochs)
    }
}

/// Always-sequential variant of [`run_seeds`].
pub fn run_seeds_sequential(
    config: &RunConfig,
    seeds: &[u64],
    methods: &[Method],
    merged_epochs: Option<usize>,
) -> Vec<SeedResult> {
    seeds
        .iter()
        .map(|&s| run_seed(config, s, methods, merged_epochs))
        .collect()
}

/// Execute a configured experiment and persist metrics, timings, summary
/// and manipulation artifacts under `out_dir`.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seeds = config.seed_list();

    // phase A: everything except the merged baseline
    let phase_a: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| *m != Method::BaseMerged)
        .collect();
    let mut seed_results = run_seeds(config, &seeds, &phase_a, None);

    // phase B: the merged baseline trains for the average epoch the base
    // method selected
    if config.methods.contains(&Method::BaseMerged) {
        let selected: Vec<f64> = seed_results
            .iter()
            .flat_map(|s| {
                s.outcomes.iter().filter_map(|(m, r)| match (m, r) {
                    (Method::Base, Ok(o)) => Some(o.selected_epoch as f64),
                    _ => None,
                })
            })
            .collect();
        let budget = if selected.is_empty() {
            config.trainer.epochs
        } else {
            (mean_std(&selected).0.round() as usize).max(1)
        };
        let merged_results = run_seeds(config, &seeds, &[Method::BaseMerged], Some(budget));
        for (sr, mr) in seed_results.iter_mut().zip(merged_results) {
            sr.outcomes.extend(mr.outcomes);
        }
    }

    // assemble records in (config method order, seed, epoch) order
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for &method in &config.methods {
        for sr in &seed_results {
            for (m, r) in &sr.outcomes {
                if *m == method {
                    if let Ok(o) = r {
                        records.extend(o.records.iter().cloned());
                        timings.extend(o.timings.iter().cloned());
                    }
                }
            }
        }
    }

    let summary = build_summary(config, &seeds, &seed_results);
    write_jsonl(&out_dir.join(METRICS_FILE), &records)?;
    write_jsonl(&out_dir.join(TIMING_FILE), &timings)?;
    write_summary(&out_dir.join(SUMMARY_FILE), &summary)?;
    write_artifacts(config, out_dir, &seed_results)?;

    Ok(RunOutput {
        summary,
        records,
        seed_results,
    })
}

fn build_summary(config: &RunConfig, seeds: &[u64], seed_results: &[SeedResult]) -> Summary {
    let methods = config
        .methods
        .iter()
        .map(|&method| {
            let mut finals = Vec::new();
            let mut selected = Vec::new();
            let mut failed = Vec::new();
            for sr in seed_results {
                for (m, r) in &sr.outcomes {
                    if *m != method {
                        continue;
                    }
                    match r {
                        Ok(o) => {
                            finals.push(o.final_test_accuracy);
                            selected.push(o.selected_epoch as f64);
                        }
                        Err(_) => failed.push(sr.seed),
                    }
                }
            }
            let (mean, std) = mean_std_opt(&finals);
            MethodSummary {
                name: method.name().to_string(),
                n_seeds: finals.len(),
                failed_seeds: failed,
                mean_test_accuracy: mean,
                std_test_accuracy: std,
                mean_selected_epoch: mean_std_opt(&selected).0,
            }
        })
        .collect();
    Summary {
        run_id: config.run_id(),
        dataset: format!("{:?}", config.data.source).to_lowercase(),
        setting: config.protocol.setting_label(),
        seeds: seeds.to_vec(),
        epochs: config.trainer.epochs,
        test_per_class: config.protocol.test_per_class(),
        methods,
    }
}

fn write_artifacts(config: &RunConfig, out_dir: &Path, seed_results: &[SeedResult]) -> Result<()> {
    for sr in seed_results {
        for (method, outcome) in &sr.outcomes {
            let Ok(o) = outcome else { continue };
            if let Some(table) = &o.weight_table {
                let path = out_dir.join(format!("weights_{}_{}.tsv", method.name(), sr.seed));
                table.write_tsv(&path)?;
            }
            if let Some(aug) = &o.augmenter {
                let path = out_dir.join(format!("augmented_{}_{}.txt", method.name(), sr.seed));
                dump_augmented_samples(config, aug, sr.seed, &path)?;
            }
        }
    }
    Ok(())
}

/// Inspection dump: a few training examples next to hardened samples drawn
/// from the final augmenter.
fn dump_augmented_samples(
    config: &RunConfig,
    aug: &AugmentParams,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let splits = config.build_splits(seed)?;
    let train = &splits.train;
    let gumbel = config.gumbel_config();
    let tau = gumbel.temperature_at(config.trainer.epochs.saturating_sub(1));
    let mut rng = rng::rng_for2(seed, rng::tag::AUGMENT, u64::MAX);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# original -> hardened augmented sample, label (tau {tau})")?;
    let n = train.len().min(20);
    for idx in 0..n {
        let id = train.ids()[idx];
        let label = train.labels()[idx];
        for _ in 0..gumbel.samples_per_original.max(1) {
            match aug {
                AugmentParams::Token(t) => {
                    let tokens = train.tokens_at(idx).expect("token dataset");
                    let positions =
                        rand::seq::index::sample(&mut rng, tokens.len(), gumbel.substitutions)
                            .into_vec();
                    let noise = sample_gumbel(&mut rng, positions.len(), t.vocab());
                    let relaxed =
                        augment_discrete_relaxed(t, tokens, label, &positions, &noise, tau)?;
                    let hard = harden(&relaxed);
                    writeln!(
                        f,
                        "id={id} label={label}: {} -> {}",
                        join_tokens(tokens),
                        join_tokens(&hard)
                    )?;
                }
                AugmentParams::Continuous(c) => {
                    let x = train.raw_row(idx).expect("real-valued dataset");
                    let noise: Vec<f64> =
                        (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let out = augment_continuous(c, x, label, &noise)?;
                    writeln!(
                        f,
                        "id={id} label={label}: {} -> {}",
                        join_floats(x),
                        join_floats(&out)
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn join_tokens(t: &[u32]) -> String {
    t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn join_floats(t: &[f64]) -> String {
    t.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}
