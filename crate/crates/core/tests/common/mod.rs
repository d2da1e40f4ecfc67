#![allow(dead_code)]

use collabsel::actors::ActorMemory;
use collabsel::console::{ConsoleState, Regime};
use collabsel::corpus::{generate_reference_task, generate_synthetic_corpus, Corpus, GeneratorConfig};
use collabsel::initializer::{
    evaluate_mixtures, fit_regressor, initialize_actor_weights, natural_proportions, planted_subcategory_costs,
    sample_mixtures, search_best_mixture, CostSurface, FitSettings,
};
use collabsel::pipeline::{run_pipeline, PipelineOutcome, RewardOracle, SelectionMode, SelectionRun};
use collabsel::reward::{InfluenceConfig, ModelKind, ReferenceTask, RewardModel};

pub const ACTORS: [&str; 3] = ["quality", "domain", "topic"];
pub const PLANTED_DOMAIN: &str = "Wikipedia";

/// 20,000 points; Wikipedia carries almost no corruption, every other
/// domain a lot. The two top quality intervals are corrupted, so the
/// quality ramp prior points the wrong way.
pub fn planted_config() -> GeneratorConfig {
    GeneratorConfig {
        domain_offsets: vec![0.6, 0.7, 0.4, 0.5, 0.5, -0.6, 0.5],
        interval_offsets: vec![0.0, 0.0, 0.0, 0.2, 0.4],
        topic_offset_sd: 0.2,
        topic_concentration: 0.3,
        label_noise: 0.2,
        corruption_scale: 1.0,
        reference_size: 500,
        ..GeneratorConfig::default()
    }
}

pub struct World {
    pub corpus: Corpus,
    pub oracle: RewardOracle,
    pub actors: Vec<ActorMemory>,
}

pub fn initial_actors(corpus: &Corpus, seed: u64) -> Vec<ActorMemory> {
    ACTORS
        .iter()
        .map(|id| {
            let blank = ActorMemory::for_registry(id, corpus.registry(), 0.0, 0.3).unwrap();
            let natural = natural_proportions(corpus, &blank).unwrap();
            let configs = sample_mixtures(id, &natural, 512, 10.0, seed).unwrap();
            let surface = CostSurface {
                costs: planted_subcategory_costs(corpus, &blank).unwrap(),
                concentration_penalty: 0.25,
            };
            let evals = evaluate_mixtures(&configs, &surface).unwrap();
            let fit = fit_regressor(&configs, &evals, FitSettings::default()).unwrap();
            let best = search_best_mixture(&fit, id, 20_000, seed).unwrap();
            initialize_actor_weights(&best, &blank).unwrap()
        })
        .collect()
}

pub fn planted_world(seed: u64) -> World {
    world_from(planted_config(), seed)
}

pub fn world_from(cfg: GeneratorConfig, seed: u64) -> World {
    let corpus = generate_synthetic_corpus(&cfg, seed).unwrap();
    let refs = generate_reference_task(&cfg, seed).unwrap();
    let task = ReferenceTask::new(refs, 500, seed).unwrap();
    let model = RewardModel::zeros(ModelKind::LinearRegression, cfg.d_f, 1e-3).unwrap();
    let actors = initial_actors(&corpus, seed);
    World {
        corpus,
        oracle: RewardOracle {
            model,
            task,
            influence: InfluenceConfig::default(),
        },
        actors,
    }
}

pub fn dynamics_run(seed: u64) -> SelectionRun {
    SelectionRun {
        total_steps: 750,
        update_every: 150,
        k: 2000,
        batch_size: 256,
        learning_rate: 0.05,
        samples_per_subcategory: 100,
        seed,
        selection: SelectionMode::Console,
    }
}

/// `regime` is "collaborative", "competitive", "single:<id>", "fixed" or
/// "random".
pub fn run_variant(world: &World, variant: &str, seed: u64) -> PipelineOutcome {
    run_variant_with(world, variant, dynamics_run(seed), 5.0)
}

pub fn run_variant_with(world: &World, variant: &str, mut run: SelectionRun, console_eta: f64) -> PipelineOutcome {
    let regime = match variant {
        "fixed" | "random" => Regime::Collaborative,
        other => other.parse().unwrap(),
    };
    let mut console = ConsoleState::new(&ACTORS, console_eta, regime).unwrap();
    console.frozen = variant == "fixed";
    if variant == "random" {
        run.selection = SelectionMode::Random;
    }
    let mut sink = Vec::new();
    run_pipeline(
        &world.corpus,
        world.actors.clone(),
        console,
        &world.oracle,
        &run,
        &mut sink,
    )
    .unwrap()
}
