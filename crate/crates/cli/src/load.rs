use redense::data::{gen_synthetic, load_csv, load_idx, split, standardize, SplitSpec};
use redense::linalg::RngSeed;
use redense::nn::Dataset;

use crate::args::{DataArgs, SplitArg};
use crate::CliError;

pub struct Splits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, which: SplitArg) -> Result<&Dataset, CliError> {
        match which {
            SplitArg::Train => Ok(&self.train),
            SplitArg::Test => Ok(&self.test),
            SplitArg::Validation => self
                .validation
                .as_ref()
                .ok_or_else(|| CliError::Usage("no validation split when a separate test set is given".into())),
        }
    }
}

fn source_count(a: &DataArgs) -> usize {
    [a.synthetic.is_some(), a.csv.is_some(), a.idx_images.is_some()]
        .iter()
        .filter(|&&b| b)
        .count()
}

pub fn load_splits(a: &DataArgs) -> Result<Splits, CliError> {
    match source_count(a) {
        0 => {
            return Err(CliError::Usage(
                "no dataset: pass --synthetic, --csv, or --idx-images with --idx-labels".into(),
            ))
        }
        1 => {}
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --synthetic, --csv, --idx-images".into(),
            ))
        }
    }
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        validation_fraction: a.validation_fraction,
        seed: RngSeed(a.split_seed),
    };

    let mut splits = if let (Some(images), Some(labels)) = (&a.test_idx_images, &a.test_idx_labels) {
        let train = load_idx(
            a.idx_images.as_ref().expect("clap requires it"),
            a.idx_labels.as_ref().expect("clap requires it"),
        )?;
        let test = load_idx(images, labels)?;
        Splits {
            train,
            validation: None,
            test,
        }
    } else {
        let all = if let Some(kind) = a.synthetic {
            gen_synthetic(kind, a.samples, a.classes, a.noise, RngSeed(a.data_seed))
                .map_err(|e| CliError::Usage(e.to_string()))?
        } else if let Some(path) = &a.csv {
            load_csv(path, a.csv_classes)?
        } else {
            load_idx(
                a.idx_images.as_ref().expect("counted"),
                a.idx_labels.as_ref().expect("clap requires it"),
            )?
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let (train, validation, test) = split(&all, &spec)?;
        Splits {
            train,
            validation: Some(validation),
            test,
        }
    };

    if a.standardize {
        let reference = splits.train.inputs.clone();
        splits.train.inputs = standardize(&reference, &splits.train.inputs)?;
        splits.test.inputs = standardize(&reference, &splits.test.inputs)?;
        if let Some(v) = &mut splits.validation {
            v.inputs = standardize(&reference, &v.inputs)?;
        }
    }
    Ok(splits)
}
