use std::fs;
use std::path::Path;

use pure_core::data::{
    load_presplit, load_ratings, read_split, split_random, write_split, RatingFormat, RngStream,
    StreamLabel,
};
use pure_core::eval::{evaluate, Protocol};
use pure_core::model::{load_checkpoint, save_checkpoint};
use pure_core::objective::HyperParams;
use pure_core::training::{
    pretrain_handoff, train_gmf, train_item_pop, train_pure, GmfMode, TrainedModel,
};

fn write_ratings(path: &Path, users: usize, items: usize) {
    let mut text = String::new();
    for u in 0..users {
        for i in 0..items {
            if (u * 5 + i * 7) % 4 == 0 {
                let rating = if (u + i) % 3 == 0 { 2 } else { 5 };
                text.push_str(&format!("{}\t{}\t{rating}\t0\n", u + 1, i + 1));
            }
        }
    }
    fs::write(path, text).unwrap();
}

fn small_hyper() -> HyperParams {
    HyperParams {
        epochs: 3,
        batch_size: 16,
        ..HyperParams::ml_100k()
    }
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.tsv");
    write_ratings(&path, 25, 30);
    let data = load_ratings(&path, RatingFormat::Tab, 4.0).unwrap();
    let split = split_random(&data, 0.8, &mut RngStream::new(3, StreamLabel::Split)).unwrap();
    write_split(dir.path().join("split"), &split).unwrap();
    let split = read_split(dir.path().join("split")).unwrap();

    let hp = small_hyper();
    let pu = train_gmf(&split.train, &hp, GmfMode::Pu, 3).unwrap();
    let models = [
        train_item_pop(&split.train).unwrap(),
        train_gmf(&split.train, &hp, GmfMode::Pn, 3).unwrap(),
        train_pure(&split.train, &hp, Some(pretrain_handoff(&pu).unwrap()), 3).unwrap(),
        pu,
    ];
    for (k, model) in models.iter().enumerate() {
        let file = dir.path().join(format!("model{k}.ckpt"));
        let ckpt = model.to_checkpoint(split.train.num_users(), split.train.num_items());
        save_checkpoint(&file, &ckpt).unwrap();
        let restored = TrainedModel::from_checkpoint(load_checkpoint(&file).unwrap());
        let before = evaluate(model, &split, Protocol::Sampled { pool_size: 10 }, 3).unwrap();
        let after = evaluate(&restored, &split, Protocol::Sampled { pool_size: 10 }, 3).unwrap();
        assert_eq!(before, after, "{:?}", model.kind);
    }
}

#[test]
fn presplit_files_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let all = dir.path().join("all.tsv");
    write_ratings(&all, 20, 24);
    let text = fs::read_to_string(&all).unwrap();
    let (base, test): (Vec<&str>, Vec<&str>) =
        text.lines()
            .enumerate()
            .fold((Vec::new(), Vec::new()), |(mut b, mut t), (k, line)| {
                if k % 5 == 0 {
                    t.push(line)
                } else {
                    b.push(line)
                }
                (b, t)
            });
    fs::write(dir.path().join("u.base"), base.join("\n")).unwrap();
    fs::write(dir.path().join("u.test"), test.join("\n")).unwrap();
    let split = load_presplit(
        dir.path().join("u.base"),
        dir.path().join("u.test"),
        RatingFormat::Tab,
        4.0,
    )
    .unwrap();
    let model = train_gmf(&split.train, &small_hyper(), GmfMode::Pu, 1).unwrap();
    let report = evaluate(&model, &split, Protocol::Full, 1).unwrap();
    assert!(report.num_users > 0);
    assert!((0.0..=1.0).contains(&report.p(5)));
}
