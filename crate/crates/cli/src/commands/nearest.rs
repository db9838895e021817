//! `i2v nearest`: nearest activities to a query code in embedding space.

use inpatient2vec::eval::{activity_embeddings, nearest_neighbors, pairwise_euclidean};
use inpatient2vec::training::load_checkpoint;

use crate::{CliError, NearestArgs};

pub fn nearest(args: NearestArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.to_model()?;
    let vocab = model.vocabulary.clone();
    let id = vocab
        .activity_id(&args.code)
        .ok_or_else(|| CliError::usage(format!("unknown activity code {:?}", args.code)))?;
    let n = vocab.n_activities();
    if n < 2 {
        return Err(CliError::usage("the vocabulary has fewer than two activities"));
    }
    let mut k = args.k.max(1);
    if k > n - 1 {
        eprintln!("warning: --k {k} clamped to {} (activities excluding the query)", n - 1);
        k = n - 1;
    }

    let embeddings = activity_embeddings(&model);
    let distances = pairwise_euclidean(&embeddings);
    let hits = nearest_neighbors(&distances, id as usize, k);
    let width = hits
        .iter()
        .map(|&(i, _)| vocab.activity_code(i as u32).len())
        .max()
        .unwrap_or(4)
        .max(4);
    println!("{:>4}  {:<width$}  {:>10}", "RANK", "CODE", "DISTANCE");
    for (rank, (i, d)) in hits.iter().enumerate() {
        println!("{:>4}  {:<width$}  {:>10.6}", rank + 1, vocab.activity_code(*i as u32), d);
    }
    Ok(())
}
