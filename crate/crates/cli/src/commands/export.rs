//! `i2v export`: embeddings as TSV, one labeled row per vector. Values are
//! written with 17 significant digits so a reimport reproduces every f64
//! exactly.

use std::fs::File;
use std::io::{BufWriter, Write};

use inpatient2vec::eval::{activity_embeddings, diagnosis_vectors, DiagnosisVectorMode};
use inpatient2vec::tensor::Graph;
use inpatient2vec::training::load_checkpoint;

use super::load_filtered;
use crate::{CliError, ExportArgs, ExportWhat};

fn write_row(w: &mut impl Write, label: &str, values: &[f64]) -> std::io::Result<()> {
    write!(w, "{label}")?;
    for v in values {
        write!(w, "\t{v:.16e}")?;
    }
    writeln!(w)
}

pub fn export(args: ExportArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.to_model()?;
    let file = File::create(&args.out)?;
    let mut w = BufWriter::new(file);

    match args.what {
        ExportWhat::Activities => {
            for (a, row) in activity_embeddings(&model).iter().enumerate() {
                write_row(&mut w, model.vocabulary.activity_code(a as u32), row)?;
            }
        }
        ExportWhat::Diagnoses => {
            let means = diagnosis_vectors(&model, DiagnosisVectorMode::DayMean);
            for (d, mean) in means.iter().enumerate() {
                let code = model.vocabulary.diagnosis_code(d as u32);
                write_row(&mut w, code, mean)?;
                // Day-indexed rows exist unless the diagnosis-as-activity
                // ablation reduced each diagnosis to a single token.
                if model.params.diag_token_table.is_none() {
                    let table = model.store.get(model.params.diag_tables[d]);
                    for t in 0..table.rows() {
                        write_row(&mut w, &format!("{code}:{}", t + 1), table.row(t))?;
                    }
                }
            }
        }
        ExportWhat::Days => {
            let path = args
                .cohort
                .as_ref()
                .ok_or_else(|| CliError::usage("--what days requires --cohort"))?;
            let r = args.common.resolve()?;
            let filtered = load_filtered(path, &r.filter)?;
            ckpt.ensure_matches(&filtered)?;
            for visit in &filtered.visits {
                let mut g = Graph::new();
                for (d, day) in visit.days.iter().enumerate() {
                    let input =
                        model.assemble_input_sequence(&mut g, day, visit.diagnosis, d + 1, None);
                    let out = model.encode_day(&mut g, input, None);
                    let row = g.value(out.t_cls).data().to_vec();
                    write_row(&mut w, &format!("{}:{}", visit.id, d + 1), &row)?;
                }
            }
        }
    }
    w.flush()?;
    println!("wrote {}", args.out.display());
    Ok(())
}
