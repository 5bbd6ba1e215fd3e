use std::path::{Path, PathBuf};

use ccpa_core::case_model::GridCase;
use ccpa_core::datagen::{generate_dataset, load_dataset, save_dataset, AttackMix, GenConfig};
use ccpa_core::evaluation::{
    arch_for, evaluate_model, meta_init, mtd_grid, mtd_selection, reproduce_table2, MtdSettings,
};
use ccpa_core::meta::{fine_tune, MetaInit};
use ccpa_core::mtd::DfactsPlan;
use ccpa_core::neuralnet::{train, Architecture, Checkpoint, CnnModel, TrainConfig};
use ccpa_core::{Error, Result};
use serde_json::json;

use crate::config::{load_case, RunConfig};
use crate::provenance::{artifact, artifacts, Provenance};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let fast = matches!(cli.command, Command::ReproduceTable2 { fast: true, .. });
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), fast)?;
    match cli.command {
        Command::ParseCase { case, json, export } => parse_case(&case, json, export.as_deref()),
        Command::GenData { case, variant, mtd, mtd_seed, n, seed, out } => {
            let grid = cfg.grid(&case)?;
            let e = &cfg.experiment;
            let seed = seed.unwrap_or(e.gen.master_seed);
            let truth = if mtd { mtd_grid(&grid, &e.mtd, mtd_seed)? } else { grid.clone() };
            let gen = GenConfig {
                n_samples: n.unwrap_or(e.n_train),
                attack_mix: variant.map_or(e.gen.attack_mix, AttackMix::only),
                mtd_active: mtd,
                master_seed: seed,
                ..e.gen.clone()
            };
            let ds = generate_dataset(&grid, &truth, &gen)?;
            let manifest = save_dataset(&ds, &out)?;
            let files = [out.with_extension("csv"), out.with_extension("json")];
            let mut p = Provenance::new(&cfg);
            p.seeds = if mtd { vec![seed, mtd_seed] } else { vec![seed] };
            p.grid_fingerprint = Some(manifest.grid_fingerprint.clone());
            p.outputs = artifacts(&files)?;
            p.write(&out)?;
            println!(
                "wrote {} samples to {} (grid {})",
                manifest.n_rows,
                files[0].display(),
                &manifest.grid_fingerprint[..12]
            );
            Ok(())
        }
        Command::MtdPlan { case, seed, eta, candidates, dfacts, out } => {
            let grid = cfg.grid(&case)?;
            let defaults = cfg.experiment.mtd.clone();
            let settings = MtdSettings {
                eta: eta.unwrap_or(defaults.eta),
                n_candidates: candidates.unwrap_or(defaults.n_candidates),
                dfacts_lines: dfacts.or(defaults.dfacts_lines),
            };
            cfg.experiment.mtd = settings.clone();
            let plan: DfactsPlan = settings.plan(&grid)?;
            let sel = mtd_selection(&grid, &settings, seed)?;
            let report = json!({
                "dfacts_lines": plan.dfacts_lines,
                "spanning_tree": plan.spanning_tree,
                "perturbation": sel.perturbation,
                "gamma": sel.gamma,
                "candidate": sel.candidate,
            });
            println!("D-FACTS lines: {:?}", plan.dfacts_lines);
            println!("selected candidate {} with SPA {:.6} rad", sel.candidate, sel.gamma);
            if let Some(out) = out {
                write_json(&out, &report)?;
                let mut p = Provenance::new(&cfg);
                p.seeds = vec![seed];
                p.grid_fingerprint = Some(grid.fingerprint());
                p.outputs = vec![artifact(&out)?];
                p.write(&out)?;
            }
            Ok(())
        }
        Command::Train { data, out, epochs, seed } => {
            let ds = load_dataset(&data)?;
            let tcfg = override_train(&cfg.experiment.train, epochs, seed);
            let arch = Architecture::table1(ds.manifest.n_measurements, ds.manifest.n_lines);
            let mut model = CnnModel::new(arch, tcfg.seed)?;
            let report = train(&mut model, &ds.samples, &tcfg)?;
            cfg.experiment.train = tcfg.clone();
            let ck = Checkpoint::from_model(&model, Some(tcfg.clone()), Some(tcfg.seed));
            ck.save(&out)?;
            finish_model(&cfg, &out, &data, &ds.manifest.grid_fingerprint, tcfg.seed, &report.loss_curve)
        }
        Command::MetaTrain { case, out, seed, iterations } => {
            let grid = cfg.grid(&case)?;
            if let Some(it) = iterations {
                cfg.experiment.meta.outer_iterations = it;
            }
            cfg.experiment.validate()?;
            let init = meta_init(&grid, &cfg.experiment, seed)?;
            init.save(&out)?;
            let mut p = Provenance::new(&cfg);
            p.seeds = vec![seed];
            p.grid_fingerprint = Some(grid.fingerprint());
            p.outputs = vec![artifact(&out)?];
            p.extra = json!({ "meta_loss_curve": init.meta_loss_curve });
            p.write(&out)?;
            println!(
                "meta-trained over {} tasks; final query loss {:.4}",
                init.provenance.n_tasks,
                init.meta_loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::FineTune { init, data, out, epochs, seed } => {
            let meta = MetaInit::load(&init)?;
            let ds = load_dataset(&data)?;
            let tcfg = override_train(&cfg.experiment.fine_tune, epochs, seed);
            let (model, report) = fine_tune(&meta, &ds.samples, &tcfg)?;
            cfg.experiment.fine_tune = tcfg.clone();
            let mut ck = Checkpoint::from_model(&model, Some(tcfg.clone()), Some(tcfg.seed));
            ck.meta = Some(meta.provenance.clone());
            ck.save(&out)?;
            finish_model(&cfg, &out, &data, &ds.manifest.grid_fingerprint, tcfg.seed, &report.loss_curve)
        }
        Command::Evaluate { model, data, threshold, out } => {
            let ck = Checkpoint::load(&model)?;
            let net = ck.to_model()?;
            let ds = load_dataset(&data)?;
            let t = threshold
                .or(ck.train_config.as_ref().map(|c| c.threshold))
                .unwrap_or(0.5);
            let m = evaluate_model(&net, &ds.samples, t)?;
            println!(
                "recall {:.2}%  precision {:.2}%{}  (tp {}, fp {}, fn {})",
                m.recall,
                m.precision,
                if m.precision_degenerate { " [degenerate]" } else { "" },
                m.totals.tp,
                m.totals.fp,
                m.totals.fn_
            );
            if let Some(out) = out {
                write_json(&out, &m)?;
                let mut p = Provenance::new(&cfg);
                p.grid_fingerprint = Some(ds.manifest.grid_fingerprint.clone());
                p.inputs = artifacts(&[model, data.with_extension("csv")])?;
                p.outputs = vec![artifact(&out)?];
                p.write(&out)?;
            }
            Ok(())
        }
        Command::ReproduceTable2 { case, fast: _, out, seeds, n_train, n_test, epochs } => {
            let grid = cfg.grid(&case)?;
            let e = &mut cfg.experiment;
            if let Some(s) = seeds {
                e.seeds = s;
            }
            if let Some(n) = n_train {
                e.n_train = n;
            }
            if let Some(n) = n_test {
                e.n_test = n;
            }
            if let Some(ep) = epochs {
                e.train.epochs = ep;
                e.fine_tune.epochs = ep;
            }
            e.validate()?;
            let report = reproduce_table2(&grid, e)?;
            print!("{}", report.table());
            write_json(&out, &report)?;
            let mut p = Provenance::new(&cfg);
            p.seeds = cfg.experiment.seeds.clone();
            p.grid_fingerprint = Some(grid.fingerprint());
            p.outputs = vec![artifact(&out)?];
            p.write(&out)?;
            Ok(())
        }
    }
}

fn override_train(base: &TrainConfig, epochs: Option<usize>, seed: Option<u64>) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(base.epochs),
        seed: seed.unwrap_or(base.seed),
        ..base.clone()
    }
}

fn finish_model(
    cfg: &RunConfig,
    out: &Path,
    data: &Path,
    grid_fingerprint: &str,
    seed: u64,
    curve: &[f64],
) -> Result<()> {
    let mut p = Provenance::new(cfg);
    p.seeds = vec![seed];
    p.grid_fingerprint = Some(grid_fingerprint.to_string());
    p.inputs = artifacts(&[data.with_extension("csv"), data.with_extension("json")])?;
    p.outputs = vec![artifact(out)?];
    p.extra = json!({ "loss_curve": curve });
    p.write(out)?;
    println!(
        "trained {} epochs; final loss {:.4}; checkpoint {}",
        curve.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_case(spec: &str, as_json: bool, export: Option<&Path>) -> Result<()> {
    let grid: GridCase = load_case(spec)?;
    let arch = arch_for(&grid);
    let summary = json!({
        "buses": grid.n_buses(),
        "branches": grid.n_branches(),
        "measurements": grid.n_measurements(),
        "states": grid.n_states(),
        "slack_bus": grid.buses[grid.slack_position()].id,
        "bridges": grid.bridges(),
        "cnn_input_width": arch.input_len,
        "fingerprint": grid.fingerprint(),
    });
    if as_json {
        println!("{summary}");
    } else {
        println!(
            "N={} L={} m={} n={} slack={} bridges={:?}",
            grid.n_buses(),
            grid.n_branches(),
            grid.n_measurements(),
            grid.n_states(),
            grid.buses[grid.slack_position()].id,
            grid.bridges()
        );
        println!("fingerprint {}", grid.fingerprint());
    }
    if let Some(path) = export {
        let path: PathBuf = path.to_path_buf();
        std::fs::write(&path, grid.to_native()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
