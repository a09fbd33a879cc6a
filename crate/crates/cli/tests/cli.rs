use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fundus_core::data::ImageSample;
use fundus_core::synth::{synth_image, write_corpus};
use fundus_core::tensor::Tensor;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

const TINY: &str = "image_size = 16\nbase_filters = 4\nn_res_blocks = 1\ndisc_filters = 4,8\nmax_steps = 4\nepochs = 1\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fundus-gan")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_run(dir: &Path, out: &str, extra: &str) -> (Output, PathBuf) {
    let corpus = dir.join("corpus");
    if !corpus.exists() {
        write_corpus(&corpus, 6, 16, 1).unwrap();
    }
    let cfg = dir.join(format!("{out}.cfg"));
    std::fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    let out = dir.join(out);
    let o = run(&["train", "--preset", "toy", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&out), "--seed", "3"]);
    (o, out)
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\nseed = 1\nlearnrate = 0.1\n").unwrap();
    let o = run(&["train", "--config", s(&cfg), "--corpus", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3") && stderr(&o).contains("learnrate"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--preset", "toy", "--corpus", s(&dir.path().join("none")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn divergence_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = tiny_run(dir.path(), "div", "lr = 1e30\n");
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn train_infer_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = tiny_run(dir.path(), "a", "");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("seed = 3\n") && echo.contains("max_steps = 4\n") && echo.contains("niqe.patch_size = 16\n"));
    assert!(stderr(&o).contains("lambda_cycle = 10"));

    let (o, again) = tiny_run(dir.path(), "b", "");
    assert_eq!(code(&o), 0);
    for f in ["losses.csv", "final.fgan", "manifest.tsv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let inputs = dir.path().join("corpus/with_artifact");
    let ck = out.join("final.fgan");
    let r1 = dir.path().join("r1");
    let o = run(&["infer", "--checkpoint", s(&ck), "--input", s(&inputs), "--out", s(&r1), "--grid"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let names = |d: &Path| {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(names(&r1), names(&inputs));
    assert_eq!(names(&r1.join("grids")).len(), 6);
    let first = r1.join(&names(&r1)[0]);
    let img = fundus_core::data::load_image(&first).unwrap();
    assert_eq!((img.height(), img.width()), (16, 16));

    let r2 = dir.path().join("r2");
    assert_eq!(code(&run(&["infer", "--checkpoint", s(&ck), "--input", s(&inputs), "--out", s(&r2)])), 0);
    for n in names(&r1) {
        assert_eq!(std::fs::read(r1.join(&n)).unwrap(), std::fs::read(r2.join(&n)).unwrap());
    }

    let big = dir.path().join("big.png");
    synth_image(1, 0, 32).artifacted.save_png(&big).unwrap();
    let o = run(&["infer", "--checkpoint", s(&ck), "--input", s(&big), "--out", s(&dir.path().join("r3"))]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let o = run(&["infer", "--checkpoint", s(&ck), "--input", s(&big), "--out", s(&dir.path().join("r3")), "--resize"]);
    assert_eq!(code(&o), 0);
}

fn texture(seed: u64, i: u64) -> ImageSample {
    let full = synth_image(seed, i, 128).clean;
    let t = Tensor::from_fn([3, 64, 64], |k| {
        let (c, y, x) = (k / 4096, (k / 64) % 64, k % 64);
        full.data.data()[c * 128 * 128 + (y + 32) * 128 + x + 32]
    })
    .unwrap();
    ImageSample::new(t).unwrap()
}

fn noisy(s: &ImageSample, seed: u64) -> ImageSample {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 2.0 * 25.0 / 255.0).unwrap();
    let mut out = s.clone();
    for v in out.data.data_mut() {
        *v = (*v as f64 + n.sample(&mut r)).clamp(-1.0, 1.0) as f32;
    }
    out
}

fn read_summary(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn score_groups_fit_and_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let (fit, clean, noise) = (dir.path().join("fit"), dir.path().join("clean"), dir.path().join("noisy"));
    for d in [&fit, &clean, &noise] {
        std::fs::create_dir_all(d).unwrap();
    }
    for i in 0..12 {
        texture(100, i).save_png(fit.join(format!("f{i:02}.png"))).unwrap();
    }
    for i in 0..6 {
        let c = texture(99, i);
        c.save_png(clean.join(format!("x{i}.png"))).unwrap();
        noisy(&c, i).save_png(noise.join(format!("x{i}.png"))).unwrap();
    }
    let out = dir.path().join("s1");
    let o = run(&[
        "score", "--preset", "toy", "--images", &format!("clean={}", s(&clean)), "--images", s(&noise),
        "--images", &format!("again={}", s(&clean)), "--fit-corpus", s(&fit), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = out.join("niqe_model.fgan");
    assert!(model.exists());
    let sum = read_summary(&out.join("summary.csv"));
    let row = |g: &str| sum.iter().find(|r| r[0] == g).unwrap().clone();
    let (again, c, n) = (row("again"), row("clean"), row("noisy"));
    assert_eq!(again[3..], c[3..]);
    let f = |r: &[String], k: usize| r[k].parse::<f64>().unwrap();
    assert!(f(&n, 3) > f(&c, 3), "NIQE {} vs {}", n[3], c[3]);
    assert!(f(&n, 5) > f(&c, 5), "PIQE {} vs {}", n[5], c[5]);

    let out2 = dir.path().join("s2");
    let o = run(&["score", "--preset", "toy", "--images", &format!("clean={}", s(&clean)), "--niqe-model", s(&model), "--out", s(&out2)]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_summary(&out2.join("summary.csv"))[0], c);

    let junk = dir.path().join("junk");
    std::fs::create_dir_all(&junk).unwrap();
    std::fs::write(junk.join("a.png"), b"not a png").unwrap();
    let o = run(&["score", "--images", s(&junk), "--niqe-model", s(&model), "--out", s(&dir.path().join("s3"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn report_series_summary_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let mut text = String::from("image,group,niqe,piqe,error\n");
    let (mut niqe_in, mut piqe_out) = (0.0, 0.0);
    for i in 0..176 {
        let (a, b) = (3.0 + (i % 7) as f64 * 0.25, 40.0 + (i % 11) as f64);
        niqe_in += a;
        piqe_out += b - 5.0;
        text.push_str(&format!("in/img{i:03}.png,input,{a},{b},\n"));
        text.push_str(&format!("out/img{i:03}.png,output,{},{},\n", a - 0.5, b - 5.0));
    }
    std::fs::write(&scores, &text).unwrap();
    let out = dir.path().join("rep");
    let o = run(&["report", "--scores", s(&scores), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_summary(&out.join("series.csv")).len(), 352);
    let paired = read_summary(&out.join("paired.csv"));
    assert_eq!(paired.len(), 176);
    assert!(paired.iter().all(|r| r[5] == "-0.500000" && r[8] == "-5.000000"));
    let sum = read_summary(&out.join("summary.csv"));
    assert!((sum[0][3].parse::<f64>().unwrap() - niqe_in / 176.0).abs() < 1e-6);
    assert!((sum[1][5].parse::<f64>().unwrap() - piqe_out / 176.0).abs() < 1e-6);
    let ps = read_summary(&out.join("paired_summary.csv"));
    assert_eq!(ps[0], ["niqe", "176", "-0.500000", "-0.500000", "176"]);

    std::fs::write(&scores, "image,group,niqe,piqe,error\n").unwrap();
    let o = run(&["report", "--scores", s(&scores), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(code(&o), 0);
    assert!(read_summary(&dir.path().join("empty/series.csv")).is_empty());

    std::fs::write(&scores, "image,group,niqe,piqe,error\na,input,1,2,\nb,input,oops,2,\n").unwrap();
    let o = run(&["report", "--scores", s(&scores), "--out", s(&dir.path().join("bad"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let losses = dir.path().join("losses.csv");
    std::fs::write(
        &losses,
        "step,epoch,d_m,d_n,g_m,g_n,cycle_m,cycle_n,id_m,id_n\n1,0,1,1,1,1,1,1,1,1\n2,0,3,3,3,3,3,3,3,3\n3,1,2,2,2,2,2,2,2,2\n",
    )
    .unwrap();
    let o = run(&["report", "--losses", s(&losses), "--out", s(&dir.path().join("loss"))]);
    assert_eq!(code(&o), 0);
    let ls = read_summary(&dir.path().join("loss/loss_summary.csv"));
    assert_eq!(ls[0][..3], ["0", "2", "2.000000"]);
    assert_eq!(ls[1][1], "1");
}
