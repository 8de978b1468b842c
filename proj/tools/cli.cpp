#include "cli.hpp"

#include "scdlab/error.hpp"
#include "scdlab/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <set>
#include <sstream>

namespace scdlab::cli {

void RunManifest::add_input(const fs::path& p) {
    inputs[p.string()] = sha256_file(p);
}

void RunManifest::add_output(const fs::path& p) {
    outputs[p.string()] = sha256_file(p);
}

Json RunManifest::to_json() const {
    Json j{{"command", command}, {"args", args}, {"config", config}, {"seed", seed}, {"inputs", inputs},
           {"outputs", outputs}};
    j["config_path"] = config_path ? Json(*config_path) : Json(nullptr);
    return j;
}

void RunManifest::write(const fs::path& path) const {
    write_file_atomic(path, to_json().dump(2) + "\n");
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
    if (flag) return *flag;
    if (const char* env = std::getenv("SCDLAB_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used != std::string_view(env).size()) throw std::invalid_argument(env);
            return v;
        } catch (const std::exception&) {
            throw ValidationError(std::string("SCDLAB_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return config_seed;
}

Json read_json_file(const fs::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        throw ValidationError("cannot parse " + path.string() + ": " + e.what());
    }
}

std::vector<double> parse_sweep(const std::string& text) {
    double a = 0, b = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    const bool parsed = static_cast<bool>(in >> a >> c1 >> b >> c2 >> step);
    if (!parsed || c1 != ':' || c2 != ':' || !(in >> std::ws).eof()) {
        throw ValidationError("sweep must look like a:b:step, got '" + text + "'");
    }
    if (!(step > 0.0) || b < a) {
        throw ValidationError("sweep needs step > 0 and b >= a, got '" + text + "'");
    }
    std::vector<double> out;
    const long n = static_cast<long>(std::floor((b - a) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * step);
    return out;
}

namespace {

struct Dataset {
    fs::path manifest;
    std::vector<Utterance> utts;
    std::vector<Matrix> features;
};

Dataset load_dataset(const fs::path& manifest) {
    Dataset d;
    d.manifest = manifest;
    d.utts = read_manifest(manifest);
    if (d.utts.empty()) throw ValidationError(manifest.string() + ": no utterances");
    const auto dir = manifest.parent_path();
    for (const auto& u : d.utts) {
        d.features.push_back(load_utterance_features(u, dir));
        if (d.features.back().cols() != d.features.front().cols()) {
            throw ValidationError("utterance '" + u.id + "': feature dimension differs from the first utterance");
        }
    }
    return d;
}

Vocabulary resolve_vocab(const std::optional<fs::path>& flag, const Dataset& data) {
    if (flag) return read_vocab(*flag);
    const auto sibling = data.manifest.parent_path() / "vocab.json";
    if (fs::exists(sibling)) return read_vocab(sibling);
    std::vector<std::string> transcripts;
    for (const auto& u : data.utts) {
        for (const auto& s : u.segments) transcripts.push_back(s.transcript);
    }
    return build_vocab(transcripts, TokenMode::Word);
}

double eval_loss(const ParameterSet& params, const ModelConfig& model, std::span<const TrainingExample> data) {
    double total = 0.0;
    int used = 0;
    for (const auto& ex : data) {
        const auto post = compute_posteriors(params, model, ex.features, ex.language_id);
        const auto c = ctc_loss(post.logp, ex.target, Vocabulary::kBlankId);
        if (!c.alignable) continue;
        total += c.nll / static_cast<double>(post.logp.rows());
        ++used;
    }
    return used ? total / used : std::numeric_limits<double>::quiet_NaN();
}

std::string lambda_tag(double lambda) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lambda);
    return buf;
}

} // namespace

void cmd_synth(const SynthOptions& opt, std::ostream& out) {
    const Json j = read_json_file(opt.config);
    const SynthConfig cfg = SynthConfig::from_json(j);
    const std::uint64_t seed = resolve_seed(opt.seed, j.value("seed", std::uint64_t{0}));
    const auto corpus = synth_corpus(cfg, seed);
    write_synthetic_corpus(corpus, opt.out);

    RunManifest m;
    m.command = "synth";
    m.args = opt.args;
    m.config_path = opt.config.string();
    m.config = cfg.to_json();
    m.seed = seed;
    m.add_input(opt.config);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(opt.out)) {
        if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) m.add_output(f);
    m.write(opt.out / "run.json");

    double seconds = 0.0;
    for (const auto* split : {&corpus.train, &corpus.test}) {
        for (const auto& u : *split) seconds += u.duration_s;
    }
    out << "synth: " << corpus.train.size() << " train + " << corpus.test.size() << " test utterances ("
        << seconds / 60.0 << " min), vocabulary " << corpus.vocab.size() << " -> " << opt.out.string() << "\n";
}

TrainOutcome cmd_train(const TrainOptions& opt, std::ostream& out) {
    const Json j = read_json_file(opt.config);
    TrainConfig cfg = TrainConfig::from_json(j);
    cfg.stage = opt.stage;
    if (opt.steps) cfg.steps = *opt.steps;
    if (opt.freeze) cfg.trainable = FreezeSpec::parse(*opt.freeze);
    cfg.seed = resolve_seed(opt.seed, cfg.seed);
    cfg.model.seed = cfg.seed;

    if (opt.init && opt.from_scratch) throw ValidationError("--init and --from-scratch are mutually exclusive");
    if (cfg.stage == Stage::Scd && !opt.init && !opt.from_scratch) {
        throw ValidationError("the scd stage needs --init <checkpoint> or --from-scratch");
    }
    if (cfg.stage == Stage::BestRq && opt.init) {
        throw ValidationError("the bestrq stage starts from random initialization; drop --init");
    }

    const Dataset data = load_dataset(opt.data);
    const Vocabulary vocab = resolve_vocab(opt.vocab, data);
    const int input_dim = static_cast<int>(data.features.front().cols());

    ParameterSet params;
    if (opt.init) {
        const Checkpoint init = load_checkpoint(*opt.init);
        ModelConfig arch = checkpoint_model_config(init);
        if (arch.input_dim != input_dim) {
            throw ValidationError("checkpoint expects " + std::to_string(arch.input_dim) +
                                  "-dim features, data has " + std::to_string(input_dim));
        }
        arch.vocab_size = static_cast<int>(vocab.size());
        arch.seed = cfg.seed;
        cfg.model = arch;
        params = warm_start_scd(init, cfg.model);
    } else {
        cfg.model.input_dim = input_dim;
        cfg.model.vocab_size = static_cast<int>(vocab.size());
        cfg.model.validate();
        params = init_parameters(cfg.model);
    }
    cfg.validate();
    for (const auto& u : data.utts) {
        if (u.language_id >= cfg.model.n_languages) {
            throw ValidationError("utterance '" + u.id + "' has language " + std::to_string(u.language_id) +
                                  " but the model knows " + std::to_string(cfg.model.n_languages));
        }
    }

    std::optional<NormStats> stats;
    if (cfg.norm == NormMode::Global) {
        std::vector<FeatureMatrix> fs_;
        for (const auto& f : data.features) fs_.push_back(FeatureMatrix{f, kDefaultFrameShiftSeconds});
        stats = compute_stats(fs_);
    }
    const auto examples = prepare_examples(data.utts, data.features, vocab, cfg, stats ? &*stats : nullptr);

    std::optional<RandomQuantizer> quantizer;
    if (cfg.stage == Stage::BestRq) {
        quantizer = make_quantizer(input_dim, cfg.bestrq.proj_dim, cfg.bestrq.codebook_size, derive_seed(cfg.seed, 0x51));
        add_bestrq_head(params, cfg.bestrq.codebook_size, cfg.model.model_dim, derive_seed(cfg.seed, 0x52));
    }
    TrainState state = make_train_state(std::move(params), cfg, quantizer);

    std::vector<TrainingExample> eval_examples;
    if (opt.eval_data && cfg.stage != Stage::BestRq) {
        const Dataset ev = load_dataset(*opt.eval_data);
        eval_examples = prepare_examples(ev.utts, ev.features, vocab, cfg, stats ? &*stats : nullptr);
    }

    TrainOutcome outcome;
    outcome.checkpoint = opt.out;
    outcome.log = opt.out;
    outcome.log += ".log.jsonl";
    std::vector<Json> log_rows;
    const NormStats* stats_ptr = stats ? &*stats : nullptr;
    auto save = [&](const TrainState& s, const Json& extra) {
        Checkpoint ckpt = make_checkpoint(s, cfg, &vocab, stats_ptr);
        ckpt.meta.update(extra);
        save_checkpoint(opt.out, ckpt);
    };
    auto write_log = [&] { write_jsonl(outcome.log, log_rows); };

    const long report_every = std::max(1, cfg.steps / 20);
    TrainHooks hooks;
    hooks.on_step = [&](const StepResult& r) {
        log_rows.push_back(Json::parse(training_log_line(r)));
        if (opt.eval_every > 0 && !eval_examples.empty() && r.step % opt.eval_every == 0) {
            const double ev = eval_loss(state.params, cfg.model, eval_examples);
            outcome.eval.emplace_back(r.step, ev);
            log_rows.push_back(Json{{"step", r.step}, {"eval_loss", ev}});
        }
        if (!opt.quiet && (r.step % report_every == 0 || r.step == cfg.steps)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "[%s] step %5ld  loss %.4f  lr_enc %.2e  lr_dec %.2e  skipped %d\n",
                          std::string(to_string(cfg.stage)).c_str(), r.step, r.loss, r.lr_enc, r.lr_dec, r.skipped);
            out << buf << std::flush;
        }
    };
    hooks.on_checkpoint = [&](const TrainState& s) { save(s, Json::object()); };

    RunManifest m;
    m.command = "train";
    m.args = opt.args;
    m.config_path = opt.config.string();
    m.config = cfg.to_json();
    m.seed = cfg.seed;
    m.add_input(opt.config);
    m.add_input(opt.data);
    if (opt.init) m.add_input(*opt.init);
    fs::path manifest_path = opt.out;
    manifest_path += ".run.json";

    try {
        outcome.history = run_training(state, examples, cfg, hooks);
    } catch (const TrainingDiverged& e) {
        // state still holds the parameters from before the failing step
        save(state, Json{{"diverged_after_step", state.step}});
        write_log();
        m.add_output(opt.out);
        m.add_output(outcome.log);
        m.write(manifest_path);
        throw;
    }
    save(state, Json::object());
    write_log();
    m.add_output(opt.out);
    m.add_output(outcome.log);
    m.write(manifest_path);
    return outcome;
}

ScdReport score_files(std::span<const Utterance> refs, std::span<const Hypothesis> hyps, double collar_s,
                      GroupBy group_by, TokenMode mode) {
    std::map<std::string, const Hypothesis*> by_id;
    std::vector<std::string> dup;
    for (const auto& h : hyps) {
        if (!by_id.emplace(h.id, &h).second) dup.push_back(h.id);
    }
    std::set<std::string> ref_ids;
    std::vector<std::string> missing;
    for (const auto& r : refs) {
        ref_ids.insert(r.id);
        if (!by_id.count(r.id)) missing.push_back(r.id);
    }
    std::vector<std::string> extra;
    for (const auto& [id, h] : by_id) {
        if (!ref_ids.count(id)) extra.push_back(id);
    }
    if (!missing.empty() || !extra.empty() || !dup.empty()) {
        std::string msg = "reference/hypothesis ids do not match";
        auto list = [&msg](const char* what, const std::vector<std::string>& ids) {
            if (ids.empty()) return;
            msg += std::string("\n  ") + what + ":";
            for (const auto& id : ids) msg += " " + id;
        };
        list("no hypothesis for", missing);
        list("no reference for", extra);
        list("duplicate hypothesis", dup);
        throw ValidationError(msg);
    }
    std::vector<UtteranceScore> scores;
    for (const auto& r : refs) {
        scores.push_back(score_utterance(r, *by_id.at(r.id), collar_s, mode));
    }
    return aggregate(scores, group_by);
}

DecodeOutcome cmd_decode(const DecodeOptions& opt, std::ostream& out) {
    if (opt.st_scale && opt.sweep) throw ValidationError("--st-scale and --st-scale-sweep are mutually exclusive");
    const std::vector<double> lambdas = opt.sweep ? parse_sweep(*opt.sweep) : std::vector<double>{opt.st_scale.value_or(1.0)};
    for (double l : lambdas) {
        if (!(l > 0.0)) throw ValidationError("st scale must be > 0, got " + lambda_tag(l));
    }

    const Checkpoint ckpt = load_checkpoint(opt.ckpt);
    const ModelConfig model = checkpoint_model_config(ckpt);
    validate_shapes(ckpt.params, model);
    const auto vocab = checkpoint_vocab(ckpt);
    if (!vocab) throw ValidationError(opt.ckpt.string() + ": checkpoint has no vocabulary");
    if (static_cast<int>(vocab->size()) != model.vocab_size) {
        throw ValidationError("checkpoint vocabulary size disagrees with its decoder projection");
    }
    const NormMode norm = checkpoint_norm_mode(ckpt);
    const auto stats = checkpoint_norm_stats(ckpt);

    const Dataset data = load_dataset(opt.data);
    if (data.features.front().cols() != model.input_dim) {
        throw ValidationError("checkpoint expects " + std::to_string(model.input_dim) + "-dim features");
    }
    std::vector<LogPosteriorMatrix> posteriors;
    for (std::size_t i = 0; i < data.utts.size(); ++i) {
        const Matrix x = normalize_features(data.features[i], norm, stats ? &*stats : nullptr);
        posteriors.push_back(compute_posteriors(ckpt.params, model, x, data.utts[i].language_id));
        validate_log_posteriors(posteriors.back().logp);
    }
    if (opt.dump_posteriors) {
        fs::create_directories(*opt.dump_posteriors);
        for (std::size_t i = 0; i < data.utts.size(); ++i) {
            write_features(*opt.dump_posteriors / (data.utts[i].id + ".scdf"), posteriors[i].logp);
        }
    }

    RunManifest m;
    m.command = "decode";
    m.args = opt.args;
    m.config = Json{{"lambdas", lambdas}, {"collar_s", opt.collar_s},
                    {"anchor", opt.anchor == TimestampAnchor::Onset ? "onset" : "center"}};
    m.seed = ckpt.meta.value("seed", std::uint64_t{0});
    m.add_input(opt.ckpt);
    m.add_input(opt.data);

    if (opt.sweep) fs::create_directories(opt.out);
    DecodeOutcome outcome;
    for (double lambda : lambdas) {
        SweepEntry e;
        e.lambda = lambda;
        e.file = opt.sweep ? opt.out / ("hyp_lambda_" + lambda_tag(lambda) + ".jsonl") : opt.out;
        DecodeConfig dc{lambda, opt.anchor};
        std::vector<Hypothesis> hyps;
        for (std::size_t i = 0; i < data.utts.size(); ++i) {
            const auto r = ctc_greedy_decode(posteriors[i], *vocab, dc);
            hyps.push_back(make_hypothesis(data.utts[i].id, r, *vocab, lambda));
            e.st_win_frames += static_cast<long>(st_win_frames(posteriors[i].logp, vocab->st_id(), lambda).size());
            e.st_tokens += static_cast<long>(r.st_times_s.size());
        }
        write_hypotheses(e.file, hyps);
        m.add_output(e.file);
        e.metrics = score_files(data.utts, hyps, opt.collar_s, GroupBy::Pooled, vocab->mode()).pooled;
        outcome.entries.push_back(std::move(e));
    }

    std::ostringstream table;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%8s %10s %9s %9s %9s %9s %9s\n", "lambda", "st_frames", "st_tokens", "Precision",
                  "Recall", "F1", "WER");
    table << buf;
    Json rows = Json::array();
    for (const auto& e : outcome.entries) {
        std::snprintf(buf, sizeof buf, "%8g %10ld %9ld %9.1f %9.1f %9.1f %9.1f\n", e.lambda, e.st_win_frames, e.st_tokens,
                      e.metrics.precision, e.metrics.recall, e.metrics.f1, e.metrics.wer_pct);
        table << buf;
        rows.push_back(Json{{"lambda", e.lambda},
                            {"file", e.file.filename().string()},
                            {"st_win_frames", e.st_win_frames},
                            {"st_tokens", e.st_tokens},
                            {"metrics", e.metrics.to_json()}});
    }
    out << table.str();
    if (opt.sweep) {
        write_file_atomic(opt.out / "sweep_summary.json", Json{{"collar_s", opt.collar_s}, {"entries", rows}}.dump(2) + "\n");
        write_file_atomic(opt.out / "sweep_summary.txt", table.str());
        m.add_output(opt.out / "sweep_summary.json");
        m.add_output(opt.out / "sweep_summary.txt");
        m.write(opt.out / "run.json");
    } else {
        fs::path p = opt.out;
        p += ".run.json";
        m.write(p);
    }
    return outcome;
}

ScdReport cmd_score(const ScoreOptions& opt, std::ostream& out) {
    const auto refs = read_manifest(opt.refs);
    const auto hyps = read_hypotheses(opt.hyps);
    const ScdReport report = score_files(refs, hyps, opt.collar_s, opt.group_by, opt.token_mode);
    const std::string table = report.render_table();
    out << table;
    if (opt.out) {
        write_file_atomic(*opt.out, report.to_json().dump(2) + "\n");
        fs::path txt = *opt.out;
        txt.replace_extension(".txt");
        write_file_atomic(txt, table);
        RunManifest m;
        m.command = "score";
        m.args = opt.args;
        m.config = Json{{"collar_s", opt.collar_s},
                        {"group_by", opt.group_by == GroupBy::Pooled ? "pooled" : "language"},
                        {"token_mode", std::string(to_string(opt.token_mode))}};
        m.add_input(opt.refs);
        m.add_input(opt.hyps);
        m.add_output(*opt.out);
        m.add_output(txt);
        fs::path p = *opt.out;
        p += ".run.json";
        m.write(p);
    }
    return report;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args(argv + 1, argv + argc);
    CLI::App app{"Speaker change detection lab: synthetic data, training, decoding, scoring", "scdlab"};
    app.require_subcommand(1);

    SynthOptions synth;
    std::string synth_config, synth_out;
    std::optional<std::uint64_t> synth_seed;
    auto* s = app.add_subcommand("synth", "Generate a seeded synthetic corpus");
    s->add_option("--config", synth_config, "Synthesis config (JSON)")->required();
    s->add_option("--seed", synth_seed, "Master seed");
    s->add_option("--out", synth_out, "Output directory")->required();

    TrainOptions train;
    std::string stage, train_config, train_data, train_out, init, freeze, vocab, eval_data;
    std::optional<int> steps;
    std::optional<std::uint64_t> train_seed;
    auto* t = app.add_subcommand("train", "Run one training stage");
    t->add_option("--stage", stage, "bestrq | asr | scd")->required();
    t->add_option("--config", train_config, "Training config (JSON)")->required();
    t->add_option("--data", train_data, "Training manifest (JSON lines)")->required();
    t->add_option("--out", train_out, "Output checkpoint")->required();
    t->add_option("--init", init, "Checkpoint to warm-start the encoder from");
    t->add_flag("--from-scratch", train.from_scratch, "Allow the scd stage without a checkpoint");
    t->add_option("--freeze", freeze, "Trainable layers: all | first_k | last_k | first_and_last_k");
    t->add_option("--steps", steps, "Override the number of steps");
    t->add_option("--seed", train_seed, "Master seed");
    t->add_option("--vocab", vocab, "Vocabulary file (default: vocab.json next to the manifest)");
    t->add_option("--eval-data", eval_data, "Held-out manifest for periodic evaluation");
    t->add_option("--eval-every", train.eval_every, "Evaluate every N steps");
    t->add_flag("--quiet", train.quiet, "No progress lines");

    DecodeOptions decode;
    std::string ckpt, decode_data, decode_out, sweep, dump, anchor = "onset";
    std::optional<double> st_scale;
    auto* d = app.add_subcommand("decode", "Greedy decoding with <st> posterior scaling");
    d->add_option("--ckpt", ckpt, "Checkpoint")->required();
    d->add_option("--data", decode_data, "Manifest to decode")->required();
    d->add_option("--out", decode_out, "Hypothesis file, or output directory for a sweep")->required();
    auto* scale_opt = d->add_option("--st-scale", st_scale, "lambda applied to the <st> posterior");
    d->add_option("--st-scale-sweep", sweep, "Sweep a:b:step")->excludes(scale_opt);
    d->add_option("--dump-posteriors", dump, "Directory for per-utterance log-posterior matrices");
    d->add_option("--collar", decode.collar_s, "Collar in seconds for the sweep summary");
    d->add_option("--timestamp", anchor, "onset | center")->check(CLI::IsMember({"onset", "center"}));

    ScoreOptions score;
    std::string refs, hyps, score_out, group_by = "pooled", token_mode = "word";
    auto* sc = app.add_subcommand("score", "SCD precision/recall/F1 and WER");
    sc->add_option("--refs", refs, "Reference manifest")->required();
    sc->add_option("--hyps", hyps, "Hypothesis file")->required();
    sc->add_option("--out", score_out, "Report JSON");
    sc->add_option("--collar", score.collar_s, "Collar in seconds");
    sc->add_option("--group-by", group_by, "pooled | language")->check(CLI::IsMember({"pooled", "language"}));
    sc->add_option("--token-mode", token_mode, "word | char")->check(CLI::IsMember({"word", "char"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        if (s->parsed()) {
            synth.config = synth_config;
            synth.seed = synth_seed;
            synth.out = synth_out;
            synth.args = args;
            cmd_synth(synth, out);
        } else if (t->parsed()) {
            train.stage = parse_stage(stage);
            train.config = train_config;
            train.data = train_data;
            train.out = train_out;
            if (!init.empty()) train.init = init;
            if (!freeze.empty()) train.freeze = freeze;
            if (!vocab.empty()) train.vocab = vocab;
            if (!eval_data.empty()) train.eval_data = eval_data;
            train.steps = steps;
            train.seed = train_seed;
            train.args = args;
            cmd_train(train, out);
        } else if (d->parsed()) {
            decode.ckpt = ckpt;
            decode.data = decode_data;
            decode.out = decode_out;
            decode.st_scale = st_scale;
            if (!sweep.empty()) decode.sweep = sweep;
            if (!dump.empty()) decode.dump_posteriors = dump;
            decode.anchor = anchor == "center" ? TimestampAnchor::Center : TimestampAnchor::Onset;
            decode.args = args;
            cmd_decode(decode, out);
        } else if (sc->parsed()) {
            score.refs = refs;
            score.hyps = hyps;
            if (!score_out.empty()) score.out = score_out;
            score.group_by = parse_group_by(group_by);
            score.token_mode = parse_token_mode(token_mode);
            score.args = args;
            cmd_score(score, out);
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const RuntimeFailure& e) {
        err << "failure: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "failure: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace scdlab::cli
