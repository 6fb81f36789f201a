mod latent;
mod pipeline;
mod train;

use std::net::SocketAddr;

use clayshape_service::ServiceState;

use crate::config::RunConfig;
use crate::data::taxonomy;
use crate::{CliError, Command, DataArgs};

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if d.catalog.is_some() {
        cfg.catalog = d.catalog.clone();
    }
    if d.taxonomy.is_some() {
        cfg.taxonomy = d.taxonomy.clone();
    }
    set(&mut cfg.image_size, d.size);
    set(&mut cfg.split_seed, d.split_seed);
    if d.unstratified {
        cfg.stratify = false;
    }
}

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::Synth {
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            set(&mut cfg.synth.classes, classes);
            set(&mut cfg.synth.per_class, per_class);
            set(&mut cfg.synth.size, size);
            set(&mut cfg.synth.seed, seed);
            if out.is_some() {
                cfg.out = out;
            }
            pipeline::synth(&cfg)
        }
        Command::Measure {
            catalog,
            taxonomy,
            out,
            size,
            threshold,
            blur_kernel,
            blur_sigma,
        } => {
            apply_data(
                &mut cfg,
                &DataArgs {
                    catalog,
                    taxonomy,
                    ..Default::default()
                },
            );
            if out.is_some() {
                cfg.out = out;
            }
            set(&mut cfg.measure_size, size);
            set(&mut cfg.mask.threshold, threshold);
            set(&mut cfg.mask.blur_kernel, blur_kernel);
            set(&mut cfg.mask.blur_sigma, blur_sigma);
            pipeline::measure(&cfg)
        }
        Command::Eda {
            measures,
            out,
            group_by,
            grid_points,
            taxonomy,
        } => {
            if taxonomy.is_some() {
                cfg.taxonomy = taxonomy;
            }
            if out.is_some() {
                cfg.out = out;
            }
            pipeline::eda(&cfg, &measures, group_by, grid_points)
        }
        Command::TrainCnn(args) => {
            apply_data(&mut cfg, &args.data);
            let tc = &mut cfg.cnn_train;
            set(&mut tc.max_epochs, args.epochs);
            set(&mut tc.learning_rate, args.lr);
            set(&mut tc.batch_size, args.batch_size);
            set(&mut tc.early_stop_patience, args.patience);
            set(&mut tc.seed, args.seed);
            if args.out.is_some() {
                cfg.out = args.out.clone();
            }
            train::train_cnn(&cfg)
        }
        Command::TrainVae(args) => {
            apply_data(&mut cfg, &args.data);
            let tc = &mut cfg.vae_train;
            set(&mut tc.max_epochs, args.epochs);
            set(&mut tc.learning_rate, args.lr);
            set(&mut tc.batch_size, args.batch_size);
            set(&mut tc.early_stop_patience, args.patience);
            set(&mut tc.seed, args.seed);
            if args.out.is_some() {
                cfg.out = args.out.clone();
            }
            train::train_vae_cmd(&cfg)
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            classifier,
            min_count,
            out,
        } => {
            let split_seed_flag = data.split_seed;
            apply_data(&mut cfg, &data);
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if out.is_some() {
                cfg.out = out;
            }
            set(&mut cfg.rare_class_min_count, min_count);
            train::eval(&cfg, &split, classifier, split_seed_flag)
        }
        Command::Latent { command } => latent::run(command, cfg),
        Command::Serve {
            checkpoint,
            catalog,
            taxonomy: tax,
            bind,
        } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if catalog.is_some() {
                cfg.catalog = catalog;
            }
            if tax.is_some() {
                cfg.taxonomy = tax;
            }
            let addr: SocketAddr = bind
                .parse()
                .map_err(|_| CliError::Usage(format!("--bind {bind:?} is not an address like 127.0.0.1:8080")))?;
            let state = ServiceState::load(cfg.require_checkpoint()?, cfg.require_catalog()?, taxonomy(&cfg)?)
                .map_err(CliError::data)?;
            clayshape_service::serve_blocking(state, addr).map_err(CliError::data)
        }
    }
}
