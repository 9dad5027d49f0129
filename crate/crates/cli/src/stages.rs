//! The six pipeline stages and their artifact plumbing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use perturbench_core::attacks::AdversarialSet;
use perturbench_core::data::{self, DatasetSpec, LabeledSet};
use perturbench_core::defenses::DefenseConfig;
use perturbench_core::error::{HarnessError, PersistError};
use perturbench_core::harness::{
    curate_dataset, robustness_experiment, select_settings, sweep, ExperimentPlan,
    SelectedSetting, SweepInputs,
};
use perturbench_core::metrics::MetricReport;
use perturbench_core::net::Network;
use perturbench_core::persist::{self, RunManifest};
use perturbench_core::report;
use perturbench_core::Error;

pub struct Stage {
    plan: ExperimentPlan,
    plan_hash: String,
    out_dir: PathBuf,
}

impl Stage {
    /// Parses the plan, applies the seed override, and prepares the
    /// artifact directory.
    pub fn load(config: &Path, seed: Option<u64>, out_dir: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(config).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                Error::Harness(HarnessError::Config(format!(
                    "plan file {} does not exist",
                    config.display()
                )))
            } else {
                Error::Persist(PersistError::Io {
                    path: config.display().to_string(),
                    source,
                })
            }
        })?;
        let mut plan = ExperimentPlan::from_toml(&text)?;
        if let Some(seed) = seed {
            plan.master_seed = seed;
        }
        std::fs::create_dir_all(out_dir).map_err(|source| PersistError::Io {
            path: out_dir.display().to_string(),
            source,
        })?;
        Ok(Stage {
            plan,
            plan_hash: persist::sha256_bytes(text.as_bytes()),
            out_dir: out_dir.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn begin(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.plan_hash.clone(), self.plan.master_seed)
    }

    fn finish(
        &self,
        mut manifest: RunManifest,
        started: Instant,
        stage: &str,
    ) -> Result<(), Error> {
        manifest.duration_seconds = started.elapsed().as_secs_f64();
        manifest.save(&self.path(&format!("{stage}.manifest.json")))?;
        Ok(())
    }

    /// The manifest a prior stage wrote; missing means that stage never ran.
    fn upstream(&self, stage: &str) -> Result<RunManifest, Error> {
        let path = self.path(&format!("{stage}.manifest.json"));
        if !path.exists() {
            return Err(PersistError::MissingArtifact {
                path: path.display().to_string(),
            }
            .into());
        }
        Ok(RunManifest::load(&path)?)
    }

    /// Confirms `path` still hashes to what its producing stage recorded.
    fn verify(manifest: &RunManifest, path: &Path) -> Result<(), Error> {
        let name = path.file_name().unwrap_or_default();
        for (key, expected) in &manifest.outputs {
            if Path::new(key).file_name() == Some(name) {
                let actual = persist::sha256_file(path)?;
                if actual != *expected {
                    return Err(PersistError::HashMismatch {
                        path: path.display().to_string(),
                        expected: expected.clone(),
                        actual,
                    }
                    .into());
                }
                return Ok(());
            }
        }
        Err(PersistError::Manifest {
            path: path.display().to_string(),
            msg: "artifact not listed in the producing stage's manifest".into(),
        }
        .into())
    }

    fn load_network(&self, manifest: &RunManifest) -> Result<(Network, PathBuf), Error> {
        let path = self.path(&self.plan.artifacts.network);
        Self::verify(manifest, &path)?;
        Ok((persist::read_network(&path)?, path))
    }

    fn load_curated(&self, manifest: &RunManifest) -> Result<(LabeledSet, PathBuf), Error> {
        let path = self.path(&self.plan.artifacts.curated);
        Self::verify(manifest, &path)?;
        Ok((data::load_file(&path)?, path))
    }

    fn load_adversarial(
        &self,
        manifest: &RunManifest,
        record_into: &mut RunManifest,
    ) -> Result<BTreeMap<String, AdversarialSet>, Error> {
        let mut sets = BTreeMap::new();
        for attack in self.plan.attacks.keys() {
            let path = self.path(&self.plan.artifacts.adversarial(attack));
            if !path.exists() {
                return Err(HarnessError::MissingAdversarialSet(attack.clone()).into());
            }
            Self::verify(manifest, &path)?;
            record_into.record_input(&path)?;
            sets.insert(attack.clone(), persist::read_adversarial_set(&path)?);
        }
        Ok(sets)
    }

    pub fn train(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("train");
        if let DatasetSpec::File { path } = &self.plan.dataset {
            manifest.record_input(Path::new(path))?;
        }
        let raw = data::generate(&self.plan.dataset)?;
        let outcome = self.plan.train_base(&raw)?;
        println!("training accuracy: {:?}", outcome.accuracy);
        println!("final loss: {:?}", outcome.final_loss);
        let raw_path = self.path(&self.plan.artifacts.raw);
        data::save_file(&raw, &raw_path)?;
        let net_path = self.path(&self.plan.artifacts.network);
        persist::write_network(&outcome.network, &net_path)?;
        manifest.record_output(&raw_path)?;
        manifest.record_output(&net_path)?;
        self.finish(manifest, started, "train")
    }

    pub fn curate(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("curate");
        let train_manifest = self.upstream("train")?;
        let (net, net_path) = self.load_network(&train_manifest)?;
        let raw_path = self.path(&self.plan.artifacts.raw);
        Self::verify(&train_manifest, &raw_path)?;
        let raw = data::load_file(&raw_path)?;
        manifest.record_input(&net_path)?;
        manifest.record_input(&raw_path)?;
        let curation = curate_dataset(&net, &raw)?;
        println!(
            "retained {} of {} inputs ({} discarded)",
            curation.retained.len(),
            curation.total,
            curation.discarded()
        );
        let curated_path = self.path(&self.plan.artifacts.curated);
        data::save_file(&curation.retained, &curated_path)?;
        manifest.record_output(&curated_path)?;
        self.finish(manifest, started, "curate")
    }

    pub fn attack(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("attack");
        let (net, net_path) = self.load_network(&self.upstream("train")?)?;
        let (curated, curated_path) = self.load_curated(&self.upstream("curate")?)?;
        manifest.record_input(&net_path)?;
        manifest.record_input(&curated_path)?;
        let sets = self.plan.generate_adversarial(&net, &curated)?;
        for (name, set) in &sets {
            let median = set
                .median_l2()
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "{name}: {}/{} succeeded, median l2 {median}",
                set.records.len(),
                set.attempted
            );
            let path = self.path(&self.plan.artifacts.adversarial(name));
            persist::write_adversarial_set(set, &path)?;
            manifest.record_output(&path)?;
        }
        self.finish(manifest, started, "attack")
    }

    pub fn sweep(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("sweep");
        let (net, net_path) = self.load_network(&self.upstream("train")?)?;
        let (curated, curated_path) = self.load_curated(&self.upstream("curate")?)?;
        manifest.record_input(&net_path)?;
        manifest.record_input(&curated_path)?;
        let adversarial = self.load_adversarial(&self.upstream("attack")?, &mut manifest)?;
        let inputs = SweepInputs {
            base: &net,
            curated: &curated,
            adversarial: &adversarial,
        };
        let reports = sweep(&self.plan, &inputs)?;
        let csv_path = self.path("sweep.csv");
        report::write_text(&csv_path, &report::render_metric_csv(&reports))?;
        manifest.record_output(&csv_path)?;
        println!("wrote {} sweep rows to {}", reports.len(), csv_path.display());
        self.finish(manifest, started, "sweep")
    }

    /// The configurations robustness runs against: the sweep's winners at
    /// the first quality floor, plus the best single-network rpenn setting
    /// as its own row when the sweep covered m = 1.
    fn chosen_configs(&self, reports: &[MetricReport]) -> Result<Vec<DefenseConfig>, Error> {
        let floor = *self
            .plan
            .selection
            .quality_floors
            .first()
            .ok_or_else(|| HarnessError::Config("no quality floors configured".into()))?;
        let mut chosen: Vec<DefenseConfig> = select_settings(reports, floor)?
            .into_iter()
            .map(|s| s.defense)
            .collect();
        for extra in single_network_rpenn_selection(reports, floor)? {
            if !chosen.contains(&extra.defense) {
                chosen.push(extra.defense);
            }
        }
        Ok(chosen)
    }

    pub fn robustness(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("robustness");
        let (net, net_path) = self.load_network(&self.upstream("train")?)?;
        let (curated, curated_path) = self.load_curated(&self.upstream("curate")?)?;
        manifest.record_input(&net_path)?;
        manifest.record_input(&curated_path)?;
        let adversarial = self.load_adversarial(&self.upstream("attack")?, &mut manifest)?;
        let sweep_csv = self.path("sweep.csv");
        Self::verify(&self.upstream("sweep")?, &sweep_csv)?;
        manifest.record_input(&sweep_csv)?;
        let sweep_reports = report::parse_metric_csv(&read_text(&sweep_csv)?, &sweep_csv)?;
        let chosen = self.chosen_configs(&sweep_reports)?;
        for cfg in &chosen {
            println!("selected {}", cfg.describe());
        }
        let inputs = SweepInputs {
            base: &net,
            curated: &curated,
            adversarial: &adversarial,
        };
        let reports = robustness_experiment(&self.plan, &chosen, &inputs)?;
        let csv_path = self.path("robustness.csv");
        report::write_text(&csv_path, &report::render_metric_csv(&reports))?;
        manifest.record_output(&csv_path)?;
        println!(
            "wrote {} robustness rows to {}",
            reports.len(),
            csv_path.display()
        );
        self.finish(manifest, started, "robustness")
    }

    pub fn report(&self) -> Result<(), Error> {
        let started = Instant::now();
        let mut manifest = self.begin("report");
        let sweep_csv = self.path("sweep.csv");
        Self::verify(&self.upstream("sweep")?, &sweep_csv)?;
        manifest.record_input(&sweep_csv)?;
        let sweep_reports = report::parse_metric_csv(&read_text(&sweep_csv)?, &sweep_csv)?;
        let robustness_csv = self.path("robustness.csv");
        Self::verify(&self.upstream("robustness")?, &robustness_csv)?;
        manifest.record_input(&robustness_csv)?;
        let robustness_reports =
            report::parse_metric_csv(&read_text(&robustness_csv)?, &robustness_csv)?;

        let mut selections: Vec<SelectedSetting> = Vec::new();
        for &floor in &self.plan.selection.quality_floors {
            selections.extend(select_settings(&sweep_reports, floor)?);
            for extra in single_network_rpenn_selection(&sweep_reports, floor)? {
                if !selections.contains(&extra) {
                    selections.push(extra);
                }
            }
        }
        for selection in &selections {
            println!(
                "floor {}: {} (worst quality {:.4}, worst efficacy {:.4})",
                selection.quality_floor,
                selection.defense.describe(),
                selection.worst_quality,
                selection.worst_efficacy
            );
        }
        let outputs = [
            ("selection.csv", report::render_selection_csv(&selections)),
            ("grid.csv", report::render_grid_csv(&sweep_reports)),
            ("curves.csv", report::render_robustness_csv(&robustness_reports)),
        ];
        for (name, content) in &outputs {
            let path = self.path(name);
            report::write_text(&path, content)?;
            manifest.record_output(&path)?;
        }
        self.finish(manifest, started, "report")
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    Ok(std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })?)
}

/// The analogue of constraining rpenn to a single network: selects again
/// over only the m = 1 sweep rows. Empty when the sweep had no such rows
/// (the full selection already covers everything else).
fn single_network_rpenn_selection(
    reports: &[MetricReport],
    floor: f64,
) -> Result<Vec<SelectedSetting>, Error> {
    let m1_rows: Vec<MetricReport> = reports
        .iter()
        .filter(|r| matches!(&r.defense, DefenseConfig::Rpenn { m: 1, .. }))
        .cloned()
        .collect();
    if m1_rows.is_empty() {
        return Ok(Vec::new());
    }
    Ok(select_settings(&m1_rows, floor)?)
}
