// radcap: synthetic-glyph caption recognition toolkit.
//
// Subcommands: gen-data, train, eval, decode, sweep. Everything that
// affects the science lives in a key=value config file; flags carry paths
// and seed overrides. Each command echoes its resolved configuration into
// the output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "radcap/radcap.hpp"
#include "radcap/runconfig.hpp"

namespace fs = std::filesystem;
using namespace radcap;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("short write: " + path.string());
}

// `seen=150,unseen=50`
std::pair<int, int> parse_split(const std::string& s, int num_classes) {
    if (s.empty()) return {num_classes, 0};
    int seen = -1, unseen = -1;
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string part = s.substr(pos, comma - pos);
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ValueError("bad --split part: " + part);
        const std::string key = part.substr(0, eq);
        const int value = std::stoi(part.substr(eq + 1));
        if (key == "seen") seen = value;
        else if (key == "unseen") unseen = value;
        else throw ValueError("bad --split key: " + key);
        pos = comma + 1;
    }
    if (seen < 0 || unseen < 0) throw ValueError("--split needs both seen= and unseen=");
    if (seen + unseen != num_classes)
        throw ValueError("--split seen+unseen must equal --classes");
    return {seen, unseen};
}

data::Split split_by_name(const std::string& name) {
    if (name == "train") return data::Split::train;
    if (name == "seen" || name == "test_seen") return data::Split::test_seen;
    if (name == "unseen" || name == "test_unseen") return data::Split::test_unseen;
    throw ValueError("unknown split name: " + name + " (expected train|seen|unseen)");
}

// Accept either the archive file or a directory containing dataset.dran.
std::string archive_path(const std::string& data) {
    if (fs::is_directory(data)) return (fs::path(data) / "dataset.dran").string();
    return data;
}

struct GenArgs {
    int classes = 0;
    int radicals = 20;
    int samples = 30;
    int eval_samples = 0;
    int depth = 3;
    std::uint64_t seed = 1;
    std::string split;
    std::string out;
    bool no_jitter = false;
};

data::Dataset run_gen(const GenArgs& a, bool quiet) {
    const auto [seen, unseen] = parse_split(a.split, a.classes);
    const glyph::JitterSpec jit = a.no_jitter ? glyph::JitterSpec::none() : glyph::JitterSpec{};
    const auto classes = glyph::build_classes(a.radicals, a.classes, a.depth, a.seed);
    data::Dataset ds =
        glyph::generate_dataset(classes, seen, a.radicals, a.samples, a.eval_samples, jit, a.seed);
    ds.validate();
    fs::create_directories(a.out);
    io::save_dataset(ds, (fs::path(a.out) / "dataset.dran").string());
    io::save_manifest(ds, (fs::path(a.out) / "manifest.tsv").string());
    char echo[512];
    std::snprintf(echo, sizeof echo,
                  "command = gen-data\nclasses = %d\nradicals = %d\nsamples = %d\n"
                  "eval_samples = %d\ndepth = %d\nseed = %llu\nsplit = seen=%d,unseen=%d\n"
                  "jitter = %s\n",
                  a.classes, a.radicals, a.samples, a.eval_samples, a.depth,
                  static_cast<unsigned long long>(a.seed), seen, unseen,
                  a.no_jitter ? "none" : "default");
    write_text(fs::path(a.out) / "gen-config.txt", echo);
    if (!quiet)
        std::printf("wrote %zu samples over %zu classes (%d seen, %d unseen) to %s\n",
                    ds.samples.size(), ds.classes.size(), seen, unseen, a.out.c_str());
    return ds;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::int64_t seed_override = -1;
};

TrainResult run_train(const TrainArgs& a, RunConfig& rc) {
    if (!a.config.empty()) rc = RunConfig::from_file(a.config);
    if (a.seed_override >= 0) rc.train.seed = static_cast<std::uint64_t>(a.seed_override);
    data::Dataset ds = io::load_dataset(archive_path(a.data));
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "config.resolved.txt", rc.echo());

    Model<float> model(rc.enc, rc.dims, ds.vocab, rc.train.seed);
    Trainer<float> trainer(model, rc.train);

    std::ofstream log(fs::path(a.out) / "train_log.csv", std::ios::trunc);
    if (!log) throw IoError("cannot open train_log.csv under " + a.out);
    log << "epoch,train_loss,val_wer,val_acc,wall_seconds\n";
    const std::string best_path = (fs::path(a.out) / "best.ckpt").string();
    const EncoderConfig enc = rc.enc;
    const DecoderDims dims = rc.dims;
    const std::uint64_t seed = rc.train.seed;
    EpochHook<float> hook = [&log, &best_path, &enc, &dims, seed](const EpochRow& row, bool best,
                                                                  Model<float>& m, Adadelta<float>& opt) {
        char line[160];
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.2f\n", row.epoch, row.train_loss,
                      row.val_wer, row.val_acc, row.wall_seconds);
        log << line;
        log.flush();
        if (best) {
            io::CheckpointMeta meta{seed, row.epoch, row.val_wer};
            io::save_checkpoint(best_path, m, enc, dims, &opt, meta);
        }
    };
    TrainResult res = trainer.train(ds, hook);
    io::CheckpointMeta meta{seed, res.best_epoch, res.best_wer};
    io::save_checkpoint((fs::path(a.out) / "last.ckpt").string(), model, enc, dims,
                        &trainer.optimizer(), meta);
    if (!fs::exists(best_path))
        io::save_checkpoint(best_path, model, enc, dims, &trainer.optimizer(), meta);
    if (!rc.train.quiet)
        std::printf("trained %d epoch(s); best val WER %.4f at epoch %d\n", res.epochs_run,
                    res.best_wer, res.best_epoch);
    return res;
}

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string report;
    std::string split = "seen";
    int beam = 10;
};

metrics::EvalReport run_eval(const EvalArgs& a, bool quiet) {
    io::LoadedCheckpoint ck = io::load_checkpoint(a.ckpt);
    data::Dataset ds = io::load_dataset(archive_path(a.data));
    const data::Split split = split_by_name(a.split);
    BeamConfig bc;
    bc.beam_size = a.beam;

    const auto idx = ds.indices_of(split);
    if (idx.empty()) throw ValueError("eval: no samples in split " + a.split);
    metrics::EvalReport rep = metrics::evaluate(ck.model, ds, split, bc);

    fs::create_directories(a.report);
    write_text(fs::path(a.report) / "report.txt", metrics::format_report(rep, ds.vocab));
    std::vector<std::vector<std::string>> rows;
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    rows.push_back({"samples", std::to_string(rep.evaluated)});
    rows.push_back({"exact_match_accuracy", num(rep.exact_match)});
    rows.push_back({"mean_wer", num(rep.mean_wer)});
    io::write_csv((fs::path(a.report) / "report.csv").string(), {"metric", "value"}, rows);

    // Per-sample transcription dump; the summary is recomputable from it.
    std::vector<std::vector<std::string>> sample_rows;
    for (int i : idx) {
        const auto& s = ds.samples[static_cast<std::size_t>(i)];
        Tensor<float> img = data::images_to_tensor<float>(ds, {i});
        AttendCache<float> cache = ck.model.encode_eval(img);
        BeamResult<float> res = beam_decode(ck.model.decoder(), cache, ds.vocab.sos(),
                                            ds.vocab.eos(), bc);
        sample_rows.push_back({std::to_string(i), ds.classes[s.class_id].label,
                               grammar::to_string(s.caption, ds.vocab),
                               grammar::to_string(res.tokens, ds.vocab),
                               num(wer(res.tokens, s.caption)),
                               res.tokens == s.caption ? "1" : "0"});
    }
    io::write_csv((fs::path(a.report) / "per_sample.csv").string(),
                  {"sample", "class", "reference", "hypothesis", "wer", "exact"}, sample_rows);
    if (!quiet)
        std::printf("split %s: accuracy %.4f, mean WER %.4f over %d samples\n", a.split.c_str(),
                    rep.exact_match, rep.mean_wer, rep.evaluated);
    return rep;
}

struct DecodeArgs {
    std::string ckpt;
    std::string image;
    std::string data;
    int index = -1;
    std::string viz_dir;
    int beam = 10;
};

int run_decode(const DecodeArgs& a) {
    io::LoadedCheckpoint ck = io::load_checkpoint(a.ckpt);
    const int S = ck.enc.input_size;
    std::vector<std::uint8_t> pixels;
    if (!a.image.empty()) {
        io::PgmImage img = io::read_pgm(a.image);
        if (img.w != S || img.h != S)
            throw ValueError("decode: expected a " + std::to_string(S) + "x" + std::to_string(S) +
                             " image, got " + std::to_string(img.w) + "x" + std::to_string(img.h));
        pixels = std::move(img.pixels);
    } else if (!a.data.empty() && a.index >= 0) {
        data::Dataset ds = io::load_dataset(archive_path(a.data));
        if (a.index >= static_cast<int>(ds.samples.size()))
            throw ValueError("decode: --index out of range");
        if (ds.image_size != S) throw ValueError("decode: archive image size mismatch");
        pixels = ds.samples[static_cast<std::size_t>(a.index)].image;
    } else {
        throw ValueError("decode: need --image or (--data and --index)");
    }

    Tensor<float> img({1, 1, S, S});
    for (int i = 0; i < S * S; ++i)
        img.data()[i] = static_cast<float>(pixels[static_cast<std::size_t>(i)]) / 255.0f;
    AttendCache<float> cache = ck.model.encode_eval(img);
    BeamConfig bc;
    bc.beam_size = a.beam;
    BeamResult<float> res =
        beam_decode(ck.model.decoder(), cache, ck.model.vocab().sos(), ck.model.vocab().eos(), bc);
    std::printf("%s\n", grammar::to_string(res.tokens, ck.model.vocab()).c_str());
    const auto validity = grammar::validate_sequence(res.tokens, ck.model.vocab());
    std::fprintf(stderr, "score %.4f, %s, %s\n", res.score,
                 res.finished ? "finished" : "length-capped",
                 validity.well_formed ? "well-formed" : "ill-formed");
    if (!a.viz_dir.empty()) {
        const int hw = ck.enc.out_hw();
        io::export_attention(res.trace, pixels, S, hw, hw, a.viz_dir);
        std::fprintf(stderr, "wrote %zu attention frames to %s\n", res.trace.size(),
                     a.viz_dir.c_str());
    }
    return 0;
}

struct SweepArgs {
    std::string config;
    std::string points = "50,100,150";
    int seeds = 3;
    int unseen = 50;
    int radicals = 20;
    int samples = 30;
    int eval_samples = 10;
    int depth = 3;
    std::string out;
};

int run_sweep(const SweepArgs& a) {
    RunConfig rc;
    if (!a.config.empty()) rc = RunConfig::from_file(a.config);
    std::vector<int> points;
    {
        std::size_t pos = 0;
        while (pos < a.points.size()) {
            auto comma = a.points.find(',', pos);
            if (comma == std::string::npos) comma = a.points.size();
            points.push_back(std::stoi(a.points.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }
    if (points.size() < 2) throw ValueError("sweep: need at least 2 --points");
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "config.resolved.txt", rc.echo());

    std::vector<metrics::SweepPoint> curve;
    std::vector<std::vector<std::string>> rows;
    for (int classes : points) {
        double acc_sum = 0.0;
        for (int s = 0; s < a.seeds; ++s) {
            const std::uint64_t seed = rc.train.seed + static_cast<std::uint64_t>(s);
            const fs::path run_dir = fs::path(a.out) /
                ("run_" + std::to_string(classes) + "_seed" + std::to_string(seed));
            GenArgs g;
            g.classes = classes + a.unseen;
            g.radicals = a.radicals;
            g.samples = a.samples;
            g.eval_samples = a.eval_samples;
            g.depth = a.depth;
            g.seed = seed;
            g.split = "seen=" + std::to_string(classes) + ",unseen=" + std::to_string(a.unseen);
            g.out = (run_dir / "data").string();
            run_gen(g, rc.train.quiet);

            RunConfig run_rc = rc;
            run_rc.train.seed = seed;
            TrainArgs t;
            t.data = g.out;
            t.out = run_dir.string();
            run_train(t, run_rc);

            EvalArgs e;
            e.ckpt = (run_dir / "best.ckpt").string();
            e.data = g.out;
            e.report = (run_dir / "report_unseen").string();
            e.split = "unseen";
            e.beam = rc.beam.beam_size;
            metrics::EvalReport rep = run_eval(e, rc.train.quiet);
            acc_sum += rep.exact_match;
            rows.push_back({std::to_string(classes), std::to_string(seed),
                            std::to_string(rep.exact_match)});
        }
        curve.push_back({classes, acc_sum / a.seeds});
    }
    metrics::SweepReport rep = metrics::sweep_report(curve);
    io::write_csv((fs::path(a.out) / "sweep_runs.csv").string(),
                  {"train_classes", "seed", "unseen_accuracy"}, rows);
    write_text(fs::path(a.out) / "sweep_report.txt", rep.table());
    std::printf("%s", rep.table().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-glyph caption recognition toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic glyph dataset");
    cmd_gen->add_option("--classes", gen.classes, "number of character classes")->required();
    cmd_gen->add_option("--radicals", gen.radicals, "radical inventory size (10..20)");
    cmd_gen->add_option("--samples", gen.samples, "training samples per class");
    cmd_gen->add_option("--eval-samples", gen.eval_samples, "extra held-out samples per seen class");
    cmd_gen->add_option("--depth", gen.depth, "max caption tree depth");
    cmd_gen->add_option("--seed", gen.seed, "generation seed");
    cmd_gen->add_option("--split", gen.split, "seen=N,unseen=M class split");
    cmd_gen->add_option("--out", gen.out, "output directory")->required();
    cmd_gen->add_flag("--no-jitter", gen.no_jitter, "disable rendering jitter");

    TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "train a captioning model");
    cmd_train->add_option("--config", train.config, "key=value run config file");
    cmd_train->add_option("--data", train.data, "dataset archive or its directory")->required();
    cmd_train->add_option("--out", train.out, "output directory")->required();
    cmd_train->add_option("--seed", train.seed_override, "override train.seed");

    EvalArgs eval;
    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on an archive split");
    cmd_eval->add_option("--ckpt", eval.ckpt, "checkpoint file")->required();
    cmd_eval->add_option("--data", eval.data, "dataset archive or its directory")->required();
    cmd_eval->add_option("--report", eval.report, "report output directory")->required();
    cmd_eval->add_option("--split", eval.split, "train|seen|unseen (default seen)");
    cmd_eval->add_option("--beam", eval.beam, "beam width (default 10)");

    DecodeArgs dec;
    CLI::App* cmd_dec = app.add_subcommand("decode", "transcribe one image");
    cmd_dec->add_option("--ckpt", dec.ckpt, "checkpoint file")->required();
    cmd_dec->add_option("--image", dec.image, "P5 PGM input image");
    cmd_dec->add_option("--data", dec.data, "dataset archive (with --index)");
    cmd_dec->add_option("--index", dec.index, "sample index into --data");
    cmd_dec->add_option("--viz-dir", dec.viz_dir, "write attention heatmaps here");
    cmd_dec->add_option("--beam", dec.beam, "beam width (default 10)");

    SweepArgs sweep;
    CLI::App* cmd_sweep = app.add_subcommand("sweep", "seen-class-count generalization sweep");
    cmd_sweep->add_option("--config", sweep.config, "key=value run config file");
    cmd_sweep->add_option("--points", sweep.points, "comma-separated seen-class counts");
    cmd_sweep->add_option("--seeds", sweep.seeds, "seeds per point (default 3)");
    cmd_sweep->add_option("--unseen", sweep.unseen, "unseen classes per run (default 50)");
    cmd_sweep->add_option("--radicals", sweep.radicals, "radical inventory size");
    cmd_sweep->add_option("--samples", sweep.samples, "training samples per class");
    cmd_sweep->add_option("--eval-samples", sweep.eval_samples, "held-out samples per seen class");
    cmd_sweep->add_option("--depth", sweep.depth, "max caption tree depth");
    cmd_sweep->add_option("--out", sweep.out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_gen->parsed()) run_gen(gen, false);
        else if (cmd_train->parsed()) {
            RunConfig rc;
            run_train(train, rc);
        } else if (cmd_eval->parsed()) run_eval(eval, false);
        else if (cmd_dec->parsed()) return run_decode(dec);
        else if (cmd_sweep->parsed()) return run_sweep(sweep);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
