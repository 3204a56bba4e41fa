use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ctmap_core::baselines::{
    dale_hrf_regressor, fpr_grid, glm_tmap, isomap_embed, pca_embed, roc_curve, vertical_average,
    RocCurve, Sidedness, SUMMARY_FPRS,
};
use ctmap_core::cluster::{cluster_embedding, label_maps, ClusterLabels};
use ctmap_core::dataset::{save_dataset, DataFormat, TimeSeriesMatrix};
use ctmap_core::graph::random_knn_graph;
use ctmap_core::phantom::{
    convolve_stimulus, generate_phantom, parse_truth_csv, BackgroundSource, HrfParams, PhantomSpec,
    StimulusSeries,
};
use ctmap_core::spectral::{commute_distance, decompose_with, embed, DecomposeOptions, Solver};
use ctmap_core::walk::WalkModel;
use ctmap_core::Error;

use crate::config::{
    read_text, BackgroundKind, KSetting, PipelineConfig, RegressorKind, SynthConfig,
};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    load_input, load_mask, load_truth, spectral_stage, write_embedding_outputs, OutDir,
};

pub fn cmd_embed(cfg: &PipelineConfig) -> CliResult<()> {
    let x = load_input(cfg)?;
    let out = OutDir::create(&cfg.output.dir)?;
    let st = spectral_stage(cfg, &x)?;
    write_embedding_outputs(&out, &x, &st)?;
    out.write("effective_config.toml", cfg.to_toml())?;
    println!(
        "embedded {} points in {} dimensions (spectral gap {:.6})",
        x.n_points(),
        st.k,
        st.embedding.eigenvalue_gap()
    );
    Ok(())
}

fn cluster_timeseries_csv(x: &TimeSeriesMatrix, labels: &ClusterLabels) -> String {
    let mut s = String::from("label,t,mean,sd,count\n");
    for label in 0..=labels.n_clusters {
        let members = labels.members(label);
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        for t in 0..x.n_samples() {
            let vals: Vec<f64> = members.iter().map(|&i| x.get(i, t)).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = if members.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            let _ = writeln!(s, "{label},{t},{mean:e},{:e},{}", var.sqrt(), members.len());
        }
    }
    s
}

/// `(label, recall, precision)` of the cluster overlapping the truth most.
pub fn best_cluster_match(labels: &ClusterLabels, truth: &[bool]) -> Option<(usize, f64, f64)> {
    let n_true = truth.iter().filter(|&&t| t).count();
    (1..=labels.n_clusters)
        .map(|c| {
            let members = labels.members(c);
            let hits = members.iter().filter(|&&i| truth[i]).count();
            (c, hits, members.len())
        })
        .filter(|&(_, _, size)| size > 0)
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, hits, size)| {
            let recall = if n_true == 0 {
                0.0
            } else {
                hits as f64 / n_true as f64
            };
            (c, recall, hits as f64 / size as f64)
        })
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> CliResult<()> {
    let x = load_input(cfg)?;
    let mask = load_mask(cfg, x.n_points())?;
    let truth = load_truth(cfg, x.n_points())?;
    let out = OutDir::create(&cfg.output.dir)?;
    let st = spectral_stage(cfg, &x)?;
    write_embedding_outputs(&out, &x, &st)?;
    let labels = match cluster_embedding(&st.embedding, &cfg.cluster.to_core(cfg.seed)) {
        Ok(l) => l,
        Err(Error::Degenerate(msg)) => {
            log::warn!("{msg}; every point is labeled background");
            ClusterLabels::from_labels(vec![0; x.n_points()], 0.0)
        }
        Err(e) => return Err(e.into()),
    };
    out.write("labels.csv", labels.to_csv())?;
    out.write(
        "cluster_timeseries.csv",
        cluster_timeseries_csv(&x, &labels),
    )?;
    if let Some(mask) = &mask {
        for (z, img) in labels.pgm_maps(mask)?.into_iter().enumerate() {
            out.write(&format!("maps/clusters_{z:03}.pgm"), img)?;
        }
    }
    let mut report = String::new();
    let _ = writeln!(report, "n_clusters = {}", labels.n_clusters);
    let _ = writeln!(report, "background_threshold = {:e}", labels.threshold);
    for (c, size) in labels.sizes.iter().enumerate() {
        let _ = writeln!(report, "size_{c} = {size}");
    }
    if let Some(truth) = &truth {
        if let Some((c, recall, precision)) = best_cluster_match(&labels, truth) {
            let _ = writeln!(report, "activated_cluster = {c}");
            let _ = writeln!(report, "recall = {recall:e}");
            let _ = writeln!(report, "precision = {precision:e}");
        }
    }
    out.write("cluster_report.txt", &report)?;
    out.write("effective_config.toml", cfg.to_toml())?;
    print!("{report}");
    Ok(())
}

pub fn build_regressor(cfg: &PipelineConfig, n_samples: usize) -> CliResult<Vec<f64>> {
    let g = &cfg.glm;
    let stimulus = || -> CliResult<StimulusSeries> {
        let path = g.stimulus.as_deref().ok_or_else(|| {
            CliError::Invalid("[glm] stimulus is required for this regressor".into())
        })?;
        Ok(StimulusSeries::from_csv(&read_text(path)?, g.tr)?)
    };
    let r = match g.regressor {
        RegressorKind::Hrf => {
            let p = HrfParams {
                alpha: g.alpha,
                b1: g.b1,
                ..HrfParams::default()
            };
            p.validate()?;
            convolve_stimulus(&stimulus()?, &p)
        }
        RegressorKind::Dale => dale_hrf_regressor(&stimulus()?, g.delta, g.tau)?,
        RegressorKind::File => {
            let path = g.regressor_path.as_deref().ok_or_else(|| {
                CliError::Invalid("[glm] regressor_path is required for a file regressor".into())
            })?;
            StimulusSeries::from_csv(&read_text(path)?, g.tr)?
                .samples()
                .to_vec()
        }
    };
    if r.len() != n_samples {
        return Err(CliError::Invalid(format!(
            "regressor has {} samples, dataset has {n_samples}",
            r.len()
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    Pca,
    Isomap,
    Glm,
}

pub fn cmd_baseline(cfg: &PipelineConfig, method: BaselineMethod) -> CliResult<()> {
    let x = load_input(cfg)?;
    let out = OutDir::create(&cfg.output.dir)?;
    let fixed_k = || match cfg.embed.k {
        KSetting::Fixed(k) => Ok(k),
        KSetting::Named(_) => Err(CliError::Invalid("baselines need a fixed embed.k".into())),
    };
    match method {
        BaselineMethod::Pca => {
            let e = pca_embed(&x, fixed_k()?)?;
            out.write("embedding.csv", e.to_csv())?;
        }
        BaselineMethod::Isomap => {
            let e = isomap_embed(&x, cfg.graph.n_neighbors, fixed_k()?)?;
            out.write("embedding.csv", e.to_csv())?;
        }
        BaselineMethod::Glm => {
            let reg = build_regressor(cfg, x.n_samples())?;
            let side = if cfg.glm.two_sided {
                Sidedness::TwoSided
            } else {
                Sidedness::OneSided
            };
            let res = glm_tmap(&x, &reg, side)?;
            out.write("tmap.csv", res.to_csv())?;
            let sig = res.significant(cfg.glm.p_threshold);
            if let Some(mask) = load_mask(cfg, x.n_points())? {
                let levels: Vec<u8> = sig.iter().map(|&s| if s { 255 } else { 128 }).collect();
                for (z, img) in label_maps(&levels, &mask)?.into_iter().enumerate() {
                    out.write(&format!("maps/glm_{z:03}.pgm"), img)?;
                }
            }
            let n_sig = sig.iter().filter(|&&s| s).count();
            let report = format!(
                "dof = {}\np_threshold = {:e}\nsignificant = {n_sig}\n",
                res.dof, cfg.glm.p_threshold
            );
            out.write("glm_report.txt", &report)?;
            print!("{report}");
        }
    }
    out.write("effective_config.toml", cfg.to_toml())?;
    Ok(())
}

pub fn cmd_synth(cfg: &SynthConfig) -> CliResult<()> {
    let out = OutDir::create(&cfg.output.dir)?;
    let stimulus = cfg.stimulus.build()?;
    let background = match cfg.background.kind {
        BackgroundKind::Ar1 => BackgroundSource::Ar1 {
            rho: cfg.background.rho,
            sigma: cfg.background.sigma,
        },
        BackgroundKind::Pool => {
            let path = cfg.background.pool.as_deref().ok_or_else(|| {
                CliError::Invalid("[background] pool path is required for kind = \"pool\"".into())
            })?;
            BackgroundSource::Pool {
                series: ctmap_core::load_dataset(path, DataFormat::from_path(path))?,
                screen_quantile: cfg.background.screen_quantile,
            }
        }
    };
    let p = &cfg.phantom;
    if p.realizations == 0 {
        return Err(CliError::Invalid(
            "phantom.realizations must be positive".into(),
        ));
    }
    let base = PhantomSpec {
        grid: p.grid,
        center: p.center,
        brain_radius: p.brain_radius,
        activation_radius: p.activation_radius,
        background,
        alpha_range: (p.alpha_range[0], p.alpha_range[1]),
        b1_range: (p.b1_range[0], p.b1_range[1]),
        hrf: cfg.hrf_params(),
        seed: p.seed,
    };
    out.write("stimulus.csv", stimulus.to_csv())?;
    let mut report = String::from("seed,voxels,activated,dataset\n");
    for r in 0..p.realizations {
        let seed = p.seed.wrapping_add(r as u64);
        let spec = PhantomSpec {
            seed,
            ..base.clone()
        };
        let ph = generate_phantom(&spec, &stimulus)?;
        let stem = format!("phantom_{seed}");
        let data_path = out.path(&format!("{stem}.fts"));
        save_dataset(&data_path, DataFormat::FtsBinary, &ph.data)?;
        out.write(&format!("{stem}_truth.csv"), ph.truth_csv())?;
        out.write(&format!("{stem}_mask.csv"), ph.mask.to_csv())?;
        let _ = writeln!(
            report,
            "{seed},{},{},{stem}.fts",
            ph.n_voxels(),
            ph.n_activated()
        );
        println!(
            "{stem}: {} voxels, {} activated",
            ph.n_voxels(),
            ph.n_activated()
        );
    }
    out.write("synth_report.csv", &report)?;
    out.write("effective_config.toml", cfg.to_toml())?;
    Ok(())
}

/// Per-voxel scores from a method output: the `t` column of a t-map, a
/// `score` column, or the radius of `c1..cK` embedding coordinates.
pub fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .collect();
    let pick = |name: &str| header.iter().position(|h| *h == name);
    let coord_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('c') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    let mode = if let Some(c) = pick("t") {
        vec![c]
    } else if let Some(c) = pick("score") {
        vec![c]
    } else if !coord_cols.is_empty() {
        coord_cols
    } else {
        return Err(CliError::Invalid(format!(
            "{}: no t, score or c1..cK columns in header",
            path.display()
        )));
    };
    let radius = mode.len() > 1 || header[mode[0]].starts_with('c');
    let mut scores = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let vals = mode
            .iter()
            .map(|&c| {
                fields
                    .get(c)
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| {
                        CliError::Invalid(format!(
                            "{}: bad value on line {}",
                            path.display(),
                            ln + 2
                        ))
                    })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        scores.push(if radius {
            vals.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            vals[0]
        });
    }
    Ok(scores)
}

pub struct RocMethod {
    pub name: String,
    pub files: Vec<PathBuf>,
}

pub fn cmd_roc(
    methods: &[RocMethod],
    truth_files: &[PathBuf],
    grid_n: usize,
    out_dir: &Path,
) -> CliResult<()> {
    if methods.is_empty() || truth_files.is_empty() {
        return Err(CliError::Invalid(
            "need at least one method and one truth file".into(),
        ));
    }
    let truths = truth_files
        .iter()
        .map(|p| Ok(parse_truth_csv(&read_text(p)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let out = OutDir::create(out_dir)?;
    let grid = fpr_grid(grid_n);
    let mut summary = String::from("method,realizations,auc");
    for f in SUMMARY_FPRS {
        let _ = write!(summary, ",tpr_at_{f}");
    }
    summary.push('\n');
    for m in methods {
        if m.files.len() != truths.len() {
            return Err(CliError::Invalid(format!(
                "method {} has {} realizations, truth has {}",
                m.name,
                m.files.len(),
                truths.len()
            )));
        }
        let curves = m
            .files
            .iter()
            .zip(&truths)
            .map(|(f, t)| Ok(roc_curve(&read_scores(f)?, t)?))
            .collect::<CliResult<Vec<RocCurve>>>()?;
        let avg = vertical_average(&curves, &grid)?;
        out.write(&format!("roc_{}.csv", m.name), avg.to_csv())?;
        let auc = curves.iter().map(|c| c.auc()).sum::<f64>() / curves.len() as f64;
        let _ = write!(summary, "{},{},{auc:.6}", m.name, curves.len());
        for f in SUMMARY_FPRS {
            let _ = write!(summary, ",{:.6}", avg.tpr_at(f));
        }
        summary.push('\n');
    }
    out.write("roc_summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

/// Spectral commute times against the dense walk oracle on random graphs.
pub fn cmd_oracle_check(n_graphs: usize, seed: u64, out_dir: Option<&Path>) -> CliResult<()> {
    let mut report = String::from("graph,n,max_rel_commute,max_rel_isometry,one_step_residual\n");
    let mut worst: f64 = 0.0;
    for gidx in 0..n_graphs {
        let gseed = seed.wrapping_add(gidx as u64);
        let n = 5 + (gseed.wrapping_mul(7919) % 26) as usize;
        let n_n = 2 + (gseed % 3) as usize;
        let g = random_knn_graph(n, n_n, gseed)?;
        let opts = DecomposeOptions {
            solver: Solver::Dense,
            ..DecomposeOptions::default()
        };
        let dec = decompose_with(&g, n, &opts)?;
        let emb = embed(&dec, n - 1)?;
        let walk = WalkModel::new(&g)?;
        let h = walk.hitting_times();
        let (mut rel_c, mut rel_i) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                let oracle = h.values[(i, j)] + h.values[(j, i)];
                let spectral = commute_distance(&dec, i, j, n)?;
                let d2: f64 = emb
                    .point(i)
                    .iter()
                    .zip(emb.point(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                rel_c = rel_c.max((spectral - oracle).abs() / oracle);
                rel_i = rel_i.max((d2 - spectral).abs() / spectral);
            }
        }
        let one_step = walk.verify_one_step(&h);
        worst = worst.max(rel_c).max(rel_i).max(one_step);
        let _ = writeln!(report, "{gidx},{n},{rel_c:e},{rel_i:e},{one_step:e}");
    }
    if let Some(dir) = out_dir {
        OutDir::create(dir)?.write("oracle_report.csv", &report)?;
    }
    println!("{n_graphs} graphs, worst discrepancy {worst:e}");
    if worst > 1e-8 {
        return Err(CliError::CheckFailed(format!(
            "spectral and walk oracles disagree by {worst:e}"
        )));
    }
    Ok(())
}
