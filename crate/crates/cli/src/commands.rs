use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use strictfair::analysis::{
    compare_methods, cross_block_similarity, kendall_tau_values, standalone_block_similarity, MethodRanking,
    SimilarityReport, StandaloneCache,
};
use strictfair::engine::checkpoint::{self, CheckpointMeta};
use strictfair::engine::data::{Dataset, Split};
use strictfair::evolution::{
    hypervolume, random_search_baseline, reference_point, run_search, Individual, Objectives, SupernetEvaluator,
};
use strictfair::experiment::ExperimentConfig;
use strictfair::fairness::{
    equal_count_probability_f64, equal_count_probability_ln, equal_count_probability_stirling, simulate_counters,
    Sampler,
};
use strictfair::search_space::{Activation, Architecture, Multiplier, SearchSpace};
use strictfair::supernet::{train_standalone, train_supernet, Supernet, TrainMode};

use crate::output::{num, RunDir};

pub struct Session {
    pub config: ExperimentConfig,
    pub run: RunDir,
}

fn save_config(run: &mut RunDir, config: &ExperimentConfig) -> Result<()> {
    run.bytes("config.toml", config.to_toml_string().as_bytes())
}

fn write_epochs(run: &mut RunDir, name: &str, log: &[strictfair::supernet::EpochLog]) -> Result<()> {
    run.csv(
        name,
        &["epoch", "step", "lr", "train_loss", "counter_variance"],
        log.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                e.step.to_string(),
                num(e.lr),
                num(e.train_loss),
                num(e.counter_variance),
            ]
        }),
    )
}

fn save_supernet(run: &mut RunDir, net: &Supernet, base: &str) -> Result<()> {
    net.save(&run.path(base))?;
    run.register(&format!("{base}.json"));
    run.register(&format!("{base}.bin"));
    Ok(())
}

/// Loads a supernet checkpoint and checks it was trained on `space`.
fn load_supernet(base: &Path, space: &SearchSpace) -> Result<Supernet> {
    let base = base.with_extension("");
    let net = Supernet::load(&base).with_context(|| format!("loading checkpoint {}", base.display()))?;
    if net.space().content_hash() != space.content_hash() {
        bail!(
            "checkpoint {} was trained on a different search space than the configuration describes",
            base.display()
        );
    }
    Ok(net)
}

/// The checkpoint at `checkpoint`, or a freshly trained supernet.
fn supernet_for(
    ctx: &mut Session,
    checkpoint: Option<&Path>,
    space: &SearchSpace,
    data: &Dataset,
) -> Result<Supernet> {
    match checkpoint {
        Some(path) => load_supernet(path, space),
        None => {
            let (net, log) = train_supernet(space.clone(), data, &ctx.config.train)?;
            write_epochs(&mut ctx.run, "epochs.csv", &log)?;
            save_supernet(&mut ctx.run, &net, "supernet")?;
            Ok(net)
        }
    }
}

pub fn train_supernet_cmd(ctx: &mut Session, mode: Option<TrainMode>, epochs: Option<usize>) -> Result<()> {
    if let Some(mode) = mode {
        ctx.config.train.mode = mode;
    }
    if let Some(epochs) = epochs {
        ctx.config.train.epochs = epochs;
    }
    save_config(&mut ctx.run, &ctx.config)?;
    let space = ctx.config.search_space()?;
    let data = ctx.config.dataset()?;
    let (net, log) = train_supernet(space, &data, &ctx.config.train)?;
    write_epochs(&mut ctx.run, "epochs.csv", &log)?;
    save_supernet(&mut ctx.run, &net, "supernet")?;
    ctx.run.json("counters.json", &net.counters().report())?;
    if let Some(last) = log.last() {
        println!(
            "{}: {} epochs, {} updates, final loss {}, counter variance {}",
            ctx.config.train.mode,
            log.len(),
            net.step(),
            num(last.train_loss),
            num(last.counter_variance)
        );
    }
    Ok(())
}

pub fn train_standalone_cmd(ctx: &mut Session, arch: Option<Architecture>) -> Result<()> {
    save_config(&mut ctx.run, &ctx.config)?;
    let space = ctx.config.search_space()?;
    let data = ctx.config.dataset()?;
    let arch = arch.unwrap_or_else(|| Architecture::zeros(space.num_layers()));
    let result = train_standalone(&space, &arch, &data, &ctx.config.train)?;
    if let Some(params) = &result.params {
        checkpoint::save(
            &ctx.run.path("standalone"),
            params,
            &CheckpointMeta {
                space: &space,
                seed: ctx.config.seed,
                step: result.steps,
                path: Some(&arch),
                counters: None,
            },
        )?;
        ctx.run.register("standalone.json");
        ctx.run.register("standalone.bin");
    }
    ctx.run.json("result.json", &result)?;
    println!(
        "{arch}: val {} test {} final loss {}",
        num(result.val_accuracy),
        num(result.test_accuracy),
        num(result.final_loss)
    );
    Ok(())
}

fn objective_row(arch: &Architecture, o: &Objectives) -> Vec<String> {
    vec![
        arch.to_string(),
        num(o.accuracy),
        o.mult_adds.to_string(),
        o.params.to_string(),
    ]
}

#[derive(Serialize)]
struct HypervolumeReport {
    reference: Objectives,
    search: f64,
    random: f64,
    search_front: usize,
    random_front: usize,
}

pub fn search_cmd(ctx: &mut Session, checkpoint: Option<&Path>) -> Result<()> {
    save_config(&mut ctx.run, &ctx.config)?;
    let space = ctx.config.search_space()?;
    let data = ctx.config.dataset()?;
    let net = supernet_for(ctx, checkpoint, &space, &data)?;
    let val = data.split_batch(Split::Val);
    let evaluator = SupernetEvaluator {
        supernet: &net,
        data: &val,
    };
    let result = run_search(&evaluator, &ctx.config.search)?;
    let (_, random_front) =
        random_search_baseline(&evaluator, ctx.config.search.evaluation_budget(), ctx.config.seed)?;

    let run = &mut ctx.run;
    run.jsonl("generations.jsonl", &result.generations)?;
    run.json("pareto.json", &result.front)?;
    let header = ["arch", "accuracy", "mult_adds", "params"];
    run.csv("pareto.csv", &header, result.front.iter().map(|i| objective_row(&i.arch, &i.obj)))?;
    run.json("selected.json", &result.selected)?;
    let mut eval_header = vec!["index"];
    eval_header.extend(header);
    run.csv(
        "evaluations.csv",
        &eval_header,
        result.evaluations.iter().enumerate().map(|(i, (a, o))| {
            let mut row = vec![i.to_string()];
            row.extend(objective_row(a, o));
            row
        }),
    )?;
    run.csv("random_front.csv", &header, random_front.iter().map(|(a, o)| objective_row(a, o)))?;

    let front: Vec<Objectives> = result.front.iter().map(|i| i.obj).collect();
    let random: Vec<Objectives> = random_front.iter().map(|x| x.1).collect();
    let reference = reference_point([front.as_slice(), random.as_slice()]);
    let report = HypervolumeReport {
        search: hypervolume(&front, &reference),
        random: hypervolume(&random, &reference),
        search_front: front.len(),
        random_front: random.len(),
        reference,
    };
    run.json("hypervolume.json", &report)?;
    let best = result
        .front
        .iter()
        .max_by(|a, b| a.obj.accuracy.total_cmp(&b.obj.accuracy).then_with(|| b.arch.cmp(&a.arch)));
    println!(
        "{} evaluations, front of {}, hypervolume {} (random {})",
        result.evaluations.len(),
        front.len(),
        num(report.search),
        num(report.random)
    );
    if let Some(Individual { arch, obj, .. }) = best {
        println!("most accurate on front: {arch} ({})", num(obj.accuracy));
    }
    Ok(())
}

#[derive(Deserialize)]
struct PairRow {
    oneshot: f64,
    standalone: f64,
}

/// Kendall tau of a CSV file with `oneshot` and `standalone` columns.
pub fn rank_pairs_cmd(ctx: &mut Session, pairs: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(pairs).with_context(|| format!("opening {}", pairs.display()))?;
    let rows: Vec<PairRow> = reader.deserialize().collect::<Result<_, _>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.oneshot).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.standalone).collect();
    let tau = kendall_tau_values(&x, &y)?;
    ctx.run.json("tau.json", &serde_json::json!({ "n": rows.len(), "tau": tau }))?;
    println!("tau {tau:.4} over {} pairs", rows.len());
    Ok(())
}

pub fn rank_cmd(ctx: &mut Session) -> Result<()> {
    save_config(&mut ctx.run, &ctx.config)?;
    let space = ctx.config.search_space()?;
    let data = ctx.config.dataset()?;
    let mut cache = StandaloneCache::new();
    let results = compare_methods(
        &space,
        &data,
        &ctx.config.train,
        &ctx.config.analysis.modes,
        &ctx.config.analysis.protocol(),
        &mut cache,
    )?;
    let rankings: Vec<&MethodRanking> = results.iter().map(|(_, r)| r).collect();
    let run = &mut ctx.run;
    run.json("ranking.json", &rankings)?;
    run.csv(
        "ranking.csv",
        &["mode", "tau", "delta_oneshot", "gap_delta_oneshot", "gap_delta_standalone", "gap_lambda"],
        rankings.iter().map(|r| {
            vec![
                r.mode.to_string(),
                num(r.tau),
                num(r.delta_oneshot),
                num(r.gap.delta_oneshot),
                num(r.gap.delta_standalone),
                num(r.gap.lambda),
            ]
        }),
    )?;
    run.csv(
        "pairs.csv",
        &["mode", "arch", "oneshot", "standalone"],
        rankings.iter().flat_map(|r| {
            r.pair
                .items
                .iter()
                .map(|i| vec![r.mode.to_string(), i.arch.to_string(), num(i.oneshot), num(i.standalone)])
        }),
    )?;
    run.csv(
        "histograms.csv",
        &["mode", "lower", "upper", "count"],
        rankings.iter().flat_map(|r| {
            let h = &r.histogram;
            (0..h.counts.len()).map(|b| {
                vec![r.mode.to_string(), num(h.edges[b]), num(h.edges[b + 1]), h.counts[b].to_string()]
            })
        }),
    )?;
    for r in &rankings {
        println!("{}: tau {:.4}, one-shot range {}", r.mode, r.tau, num(r.delta_oneshot));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimilarityOutput {
    layer: usize,
    supernet_mean_off_diagonal: f64,
    standalone_mean_off_diagonal: f64,
    supernet: SimilarityReport,
    standalone: SimilarityReport,
}

pub fn similarity_cmd(ctx: &mut Session, checkpoint: Option<&Path>, layer: Option<usize>) -> Result<()> {
    if let Some(layer) = layer {
        ctx.config.analysis.probe_layer = layer;
    }
    ctx.config.validate()?;
    save_config(&mut ctx.run, &ctx.config)?;
    let space = ctx.config.search_space()?;
    let data = ctx.config.dataset()?;
    let net = supernet_for(ctx, checkpoint, &space, &data)?;
    let layer = ctx.config.analysis.probe_layer;
    let probe = data.split_batch(Split::Test);
    let prefix = Architecture::zeros(space.num_layers());
    let supernet = cross_block_similarity(&net, layer, &probe, &prefix)?;
    let standalone = standalone_block_similarity(&space, layer, &prefix, &data, &ctx.config.train, &probe)?;
    let out = SimilarityOutput {
        layer,
        supernet_mean_off_diagonal: supernet.mean_off_diagonal(),
        standalone_mean_off_diagonal: standalone.mean_off_diagonal(),
        supernet,
        standalone,
    };
    ctx.run.json("similarity.json", &out)?;
    let rows = [("supernet", &out.supernet), ("standalone", &out.standalone)]
        .into_iter()
        .flat_map(|(source, report)| {
            report.mean.iter().enumerate().flat_map(move |(i, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(j, v)| vec![source.to_string(), i.to_string(), j.to_string(), num(*v)])
            })
        })
        .collect::<Vec<_>>();
    ctx.run.csv("similarity.csv", &["source", "i", "j", "mean_cosine"], rows)?;
    println!(
        "layer {layer}: mean off-diagonal similarity {} (supernet) vs {} (stand-alone)",
        num(out.supernet_mean_off_diagonal),
        num(out.standalone_mean_off_diagonal)
    );
    Ok(())
}

pub fn lemma_curve_cmd(ctx: &mut Session, m: u64, n_max: u64, exact_max: u64) -> Result<()> {
    if m < 2 || n_max < m {
        bail!("need m >= 2 and n-max >= m");
    }
    let mut rows = Vec::new();
    let mut n = m;
    while n <= n_max {
        let exact = if n <= exact_max {
            num(equal_count_probability_f64(m, n)?)
        } else {
            String::new()
        };
        rows.push(vec![
            m.to_string(),
            n.to_string(),
            exact,
            num(equal_count_probability_ln(m, n)?.exp()),
            num(equal_count_probability_stirling(m, n)?),
        ]);
        n += m;
    }
    let count = rows.len();
    ctx.run.csv("lemma_curve.csv", &["m", "n", "f_exact", "f_log", "f_stirling"], rows)?;
    println!("{count} rows for m = {m}, n up to {n_max}");
    Ok(())
}

#[derive(Serialize)]
struct FairnessSim {
    sampler: Sampler,
    choices: usize,
    layers: usize,
    bps: u64,
    expected_uniform_variance: f64,
    seeds: Vec<u64>,
    mean_variance_per_seed: Vec<f64>,
    mean_variance: f64,
    max_variance: f64,
    relative_error: f64,
}

/// A space of `m` interchangeable choices per layer; counts do not depend on
/// the blocks themselves.
pub fn counting_space(m: usize, layers: usize) -> Result<SearchSpace> {
    let one = Multiplier::integer(1)?;
    let ops: Vec<_> = (0..m).map(|_| (one, Activation::Relu, false)).collect();
    Ok(SearchSpace::uniform(1, 1, vec![1; layers + 1], &ops)?)
}

pub fn fairness_sim_cmd(ctx: &mut Session, sampler: Sampler, m: usize, layers: usize, bps: u64, seeds: u64) -> Result<()> {
    let space = counting_space(m, layers)?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| ctx.config.seed + i).collect();
    let reports = seed_list
        .iter()
        .map(|&s| simulate_counters(&space, sampler, bps, s))
        .collect::<strictfair::Result<Vec<_>>>()?;
    let per_seed: Vec<f64> = reports.iter().map(|r| r.mean_variance()).collect();
    let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
    let expected = reports.first().map(|r| r.uniform_variance).unwrap_or(0.0);
    let out = FairnessSim {
        sampler,
        choices: m,
        layers,
        bps,
        expected_uniform_variance: expected,
        seeds: seed_list,
        max_variance: reports.iter().map(|r| r.max_variance()).fold(0.0, f64::max),
        relative_error: if expected > 0.0 { (mean - expected).abs() / expected } else { 0.0 },
        mean_variance_per_seed: per_seed,
        mean_variance: mean,
    };
    ctx.run.json("fairness_sim.json", &out)?;
    println!(
        "{:?} sampling, {} BPs: mean count variance {} (uniform expectation {}, relative error {})",
        sampler,
        bps,
        num(out.mean_variance),
        num(expected),
        num(out.relative_error)
    );
    Ok(())
}

#[derive(Serialize)]
struct BlockRow {
    layer: usize,
    choice: usize,
    hidden: usize,
    activation: Activation,
    residual: bool,
    params: u64,
    mult_adds: u64,
}

pub fn profile_cmd(ctx: &mut Session, arch: Option<Architecture>) -> Result<()> {
    let space = ctx.config.search_space()?;
    let mut blocks = Vec::new();
    for l in 0..space.num_layers() {
        for c in 0..space.choices() {
            let s = space.block_shape(l, c);
            blocks.push(BlockRow {
                layer: l,
                choice: c,
                hidden: s.hidden,
                activation: s.activation,
                residual: s.residual,
                params: s.params(),
                mult_adds: s.mult_adds(),
            });
        }
    }
    ctx.run.csv(
        "blocks.csv",
        &["layer", "choice", "hidden", "activation", "residual", "params", "mult_adds"],
        blocks.iter().map(|b| {
            vec![
                b.layer.to_string(),
                b.choice.to_string(),
                b.hidden.to_string(),
                b.activation.to_string(),
                b.residual.to_string(),
                b.params.to_string(),
                b.mult_adds.to_string(),
            ]
        }),
    )?;
    if let Some(arch) = arch {
        let p = space.profile(&arch)?;
        ctx.run.json("profile.json", &serde_json::json!({ "arch": arch, "params": p.params, "mult_adds": p.mult_adds }))?;
        println!("{arch}: {} params, {} mult-adds", p.params, p.mult_adds);
    } else {
        println!(
            "{} layers x {} choices, {} architectures",
            space.num_layers(),
            space.choices(),
            space.count_architectures()
        );
    }
    Ok(())
}
