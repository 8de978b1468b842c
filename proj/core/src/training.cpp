#include "scdlab/training.hpp"

#include "scdlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace scdlab {

void LrSchedule::validate() const {
    if (!(peak > 0.0)) throw ValidationError("lr schedule: peak must be > 0");
    if (warmup_steps < 1) throw ValidationError("lr schedule: warmup_steps must be >= 1");
}

double lr_at(const LrSchedule& schedule, long step) {
    if (step < 1) {
        throw ValidationError("lr_at: step must be >= 1");
    }
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(schedule.warmup_steps);
    return schedule.peak * std::min(s / w, std::sqrt(w / s));
}

Stage parse_stage(std::string_view name) {
    if (name == "bestrq") return Stage::BestRq;
    if (name == "asr") return Stage::Asr;
    if (name == "scd") return Stage::Scd;
    throw ValidationError("unknown stage '" + std::string(name) + "' (expected bestrq|asr|scd)");
}

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::BestRq: return "bestrq";
    case Stage::Asr: return "asr";
    case Stage::Scd: return "scd";
    }
    return "scd";
}

namespace {

Json schedule_json(const LrSchedule& s) {
    return Json{{"peak", s.peak}, {"warmup_steps", s.warmup_steps}};
}

LrSchedule schedule_from(const Json& j, LrSchedule d) {
    d.peak = j.value("peak", d.peak);
    d.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    return d;
}

} // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw ValidationError("train config: steps must be >= 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    enc_schedule.validate();
    dec_schedule.validate();
    model.validate();
    if (stage == Stage::BestRq) {
        if (bestrq.codebook_size < 1 || bestrq.proj_dim < 1 || bestrq.span_frames < 1 || bestrq.mask_prob < 0.0 ||
            bestrq.mask_prob > 1.0) {
            throw ValidationError("train config: invalid bestrq settings");
        }
    }
    if (threads < 0) throw ValidationError("train config: threads must be >= 0");
}

Json TrainConfig::to_json() const {
    return Json{{"stage", std::string(to_string(stage))},
                {"steps", steps},
                {"batch_size", batch_size},
                {"enc_schedule", schedule_json(enc_schedule)},
                {"dec_schedule", schedule_json(dec_schedule)},
                {"trainable", trainable.to_string()},
                {"seed", seed},
                {"model", model.to_json()},
                {"bestrq",
                 {{"proj_dim", bestrq.proj_dim},
                  {"codebook_size", bestrq.codebook_size},
                  {"span_frames", bestrq.span_frames},
                  {"mask_prob", bestrq.mask_prob}}},
                {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
                {"specaugment",
                 {{"n_time_masks", specaugment.n_time_masks},
                  {"max_time_width_frames", specaugment.max_time_width_frames},
                  {"n_freq_masks", specaugment.n_freq_masks},
                  {"max_freq_width_bins", specaugment.max_freq_width_bins},
                  {"mask_value", specaugment.mask_value}}},
                {"norm", std::string(to_string(norm))},
                {"trailing_st", trailing_st},
                {"grad_clip", grad_clip},
                {"checkpoint_every", checkpoint_every},
                {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
    TrainConfig c;
    try {
        if (j.contains("stage")) c.stage = parse_stage(j["stage"].get<std::string>());
        c.steps = j.value("steps", c.steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("enc_schedule")) c.enc_schedule = schedule_from(j["enc_schedule"], c.enc_schedule);
        if (j.contains("dec_schedule")) c.dec_schedule = schedule_from(j["dec_schedule"], c.dec_schedule);
        if (j.contains("trainable")) c.trainable = FreezeSpec::parse(j["trainable"].get<std::string>());
        c.seed = j.value("seed", c.seed);
        if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
        if (j.contains("bestrq")) {
            const auto& b = j["bestrq"];
            c.bestrq.proj_dim = b.value("proj_dim", c.bestrq.proj_dim);
            c.bestrq.codebook_size = b.value("codebook_size", c.bestrq.codebook_size);
            c.bestrq.span_frames = b.value("span_frames", c.bestrq.span_frames);
            c.bestrq.mask_prob = b.value("mask_prob", c.bestrq.mask_prob);
        }
        if (j.contains("adam")) {
            const auto& a = j["adam"];
            c.adam.beta1 = a.value("beta1", c.adam.beta1);
            c.adam.beta2 = a.value("beta2", c.adam.beta2);
            c.adam.eps = a.value("eps", c.adam.eps);
        }
        if (j.contains("specaugment")) {
            const auto& s = j["specaugment"];
            c.specaugment.n_time_masks = s.value("n_time_masks", 0);
            c.specaugment.max_time_width_frames = s.value("max_time_width_frames", 0);
            c.specaugment.n_freq_masks = s.value("n_freq_masks", 0);
            c.specaugment.max_freq_width_bins = s.value("max_freq_width_bins", 0);
            c.specaugment.mask_value = s.value("mask_value", 0.0);
        }
        if (j.contains("norm")) c.norm = parse_norm_mode(j["norm"].get<std::string>());
        c.trailing_st = j.value("trailing_st", c.trailing_st);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.threads = j.value("threads", c.threads);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    return c;
}

TokenSeq stage_target(Stage stage, const Utterance& utt, const Vocabulary& vocab, bool trailing_st) {
    switch (stage) {
    case Stage::BestRq: return {};
    case Stage::Asr: return make_transcript_target(utt, vocab);
    case Stage::Scd: return make_target(utt, vocab, trailing_st);
    }
    return {};
}

Matrix normalize_features(const Matrix& raw, NormMode mode, const NormStats* global_stats) {
    FeatureMatrix f{raw, kDefaultFrameShiftSeconds};
    switch (mode) {
    case NormMode::None: return raw;
    case NormMode::Utterance: return mvn(f, compute_stats(f)).frames;
    case NormMode::Global:
        if (!global_stats) throw ValidationError("global normalization requested without statistics");
        return mvn(f, *global_stats).frames;
    }
    return raw;
}

std::vector<TrainingExample> prepare_examples(std::span<const Utterance> utts, std::span<const Matrix> raw_features,
                                              const Vocabulary& vocab, const TrainConfig& cfg,
                                              const NormStats* global_stats) {
    if (utts.size() != raw_features.size()) {
        throw ValidationError("prepare_examples: utterance/feature count mismatch");
    }
    std::vector<TrainingExample> out;
    out.reserve(utts.size());
    for (std::size_t i = 0; i < utts.size(); ++i) {
        TrainingExample ex;
        ex.id = utts[i].id;
        ex.language_id = utts[i].language_id;
        ex.features = normalize_features(raw_features[i], cfg.norm, global_stats);
        ex.target = stage_target(cfg.stage, utts[i], vocab, cfg.trailing_st);
        out.push_back(std::move(ex));
    }
    return out;
}

bool is_decoder_tensor(std::string_view name) {
    return name.starts_with(kDecoderPrefix) || name.starts_with(kBestRqHeadPrefix);
}

TrainState make_train_state(ParameterSet params, const TrainConfig& cfg, std::optional<RandomQuantizer> quantizer) {
    if (cfg.stage == Stage::BestRq) {
        if (!quantizer) throw ValidationError("bestrq stage needs a quantizer");
        if (!params.contains(std::string(kBestRqHeadPrefix) + "weight")) {
            throw ValidationError("bestrq stage needs a prediction head");
        }
    }
    TrainState state;
    state.mask = select_trainable(params, cfg.model, cfg.trainable);
    if (cfg.stage == Stage::BestRq) {
        for (auto& [name, on] : state.mask.flags) {
            if (name.starts_with(kDecoderPrefix)) on = false;
        }
    }
    for (const auto& e : params.entries()) {
        if (!state.mask.trainable(e.name)) continue;
        auto& opt = is_decoder_tensor(e.name) ? state.dec_opt : state.enc_opt;
        opt.moments[e.name] = Moments{Matrix::Zero(e.value.rows(), e.value.cols()),
                                      Matrix::Zero(e.value.rows(), e.value.cols())};
    }
    state.params = std::move(params);
    state.quantizer = std::move(quantizer);
    return state;
}

bool example_gradient(const TrainState& state, const TrainConfig& cfg, const TrainingExample& ex,
                      std::uint64_t sample_seed, ParameterSet& grads, double& loss) {
    Matrix input = ex.features;
    const bool augment = cfg.specaugment.n_time_masks > 0 || cfg.specaugment.n_freq_masks > 0;
    if (augment && cfg.stage != Stage::BestRq) {
        input = specaugment(FeatureMatrix{input, kDefaultFrameShiftSeconds}, cfg.specaugment,
                            derive_seed(sample_seed, 7))
                    .frames;
    }
    if (cfg.stage == Stage::BestRq) {
        const auto mask = sample_mask(static_cast<int>(input.rows()), cfg.bestrq.span_frames, cfg.bestrq.mask_prob,
                                      derive_seed(sample_seed, 3));
        if (mask.count() == 0) return false;
        const auto r = bestrq_step(state.params, cfg.model, *state.quantizer, input, ex.language_id, mask, grads);
        loss = r.nll;
        return true;
    }
    const ForwardPass pass = encode(state.params, cfg.model, input, ex.language_id);
    const Matrix logp = decoder_projection(state.params, pass.hidden);
    auto ctc = ctc_loss(logp, ex.target, Vocabulary::kBlankId);
    if (!ctc.alignable) return false;
    const double frames = static_cast<double>(logp.rows());
    loss = ctc.nll / frames;
    const Matrix dlogp = ctc.grad / frames;
    const std::string head(kDecoderPrefix);
    const Matrix dhidden = head_backward(state.params, head, pass.hidden, logp, dlogp, grads);
    encode_backward(state.params, cfg.model, pass, dhidden, grads);
    return true;
}

namespace {

void adam_update(Matrix& param, const Matrix& grad, Moments& mom, long t, double lr, const AdamConfig& a) {
    mom.m = a.beta1 * mom.m + (1.0 - a.beta1) * grad;
    mom.v = a.beta2 * mom.v + (1.0 - a.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
    param.array() -= lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + a.eps);
}

} // namespace

StepResult train_step(TrainState& state, std::span<const TrainingExample* const> batch, const TrainConfig& cfg) {
    StepResult r;
    r.step = state.step + 1;
    const std::uint64_t step_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r.step));

    struct Slot {
        ParameterSet grads;
        double loss = 0.0;
        bool used = false;
        std::string error;
    };
    std::vector<Slot> slots(batch.size());
    auto work = [&](std::size_t i) {
        try {
            slots[i].grads = state.params.zeros_like();
            slots[i].used = example_gradient(state, cfg, *batch[i], derive_seed(step_seed, i), slots[i].grads,
                                             slots[i].loss);
        } catch (const std::exception& e) {
            slots[i].error = e.what();
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(batch.size(), static_cast<std::size_t>(std::max(cfg.threads, 1)));
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < batch.size(); ++i) work(i);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_threads; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < batch.size(); i += n_threads) work(i);
            });
        }
    }

    ParameterSet total = state.params.zeros_like();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!slots[i].error.empty()) {
            throw ValidationError("example '" + batch[i]->id + "': " + slots[i].error);
        }
        if (!slots[i].used) {
            ++r.skipped;
            continue;
        }
        ++r.used;
        r.loss += slots[i].loss;
        total.add_scaled(slots[i].grads, 1.0);
    }
    r.lr_enc = lr_at(cfg.enc_schedule, r.step);
    r.lr_dec = lr_at(cfg.dec_schedule, r.step);
    if (r.used == 0) {
        state.step = r.step;
        return r;
    }
    r.loss /= r.used;
    const double inv = 1.0 / r.used;
    double sq = 0.0;
    for (auto& e : total.entries()) {
        e.value *= inv;
        if (state.mask.trainable(e.name)) sq += e.value.squaredNorm();
    }
    r.grad_norm = std::sqrt(sq);
    if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm)) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient at step " << r.step << " (loss " << r.loss << ", grad norm "
            << r.grad_norm << ") on batch [";
        for (std::size_t i = 0; i < batch.size(); ++i) msg << (i ? ", " : "") << batch[i]->id;
        msg << "]";
        throw TrainingDiverged(msg.str());
    }
    state.step = r.step;
    const double clip = cfg.grad_clip > 0.0 && r.grad_norm > cfg.grad_clip ? cfg.grad_clip / r.grad_norm : 1.0;

    ++state.enc_opt.step;
    ++state.dec_opt.step;
    for (auto& e : state.params.entries()) {
        if (!state.mask.trainable(e.name)) continue;
        const bool dec = is_decoder_tensor(e.name);
        auto& opt = dec ? state.dec_opt : state.enc_opt;
        adam_update(e.value, clip * total.at(e.name), opt.moments.at(e.name), opt.step, dec ? r.lr_dec : r.lr_enc,
                    cfg.adam);
    }
    return r;
}

BatchSampler::BatchSampler(std::size_t n_examples, int batch_size, std::uint64_t seed)
    : n_(n_examples), batch_size_(batch_size), seed_(seed) {
    if (n_ == 0) throw ValidationError("no training examples");
    reshuffle();
}

void BatchSampler::reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, 0xe90c + static_cast<std::uint64_t>(epoch_)));
    shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
    if (cursor_ >= n_) {
        ++epoch_;
        reshuffle();
    }
    const std::size_t end = std::min(n_, cursor_ + static_cast<std::size_t>(batch_size_));
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
}

std::vector<StepResult> run_training(TrainState& state, std::span<const TrainingExample> data, const TrainConfig& cfg,
                                     const TrainHooks& hooks) {
    cfg.validate();
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    std::vector<StepResult> history;
    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<const TrainingExample*> batch;
        for (auto i : sampler.next()) batch.push_back(&data[i]);
        auto r = train_step(state, batch, cfg);
        history.push_back(r);
        if (hooks.on_step) hooks.on_step(r);
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) {
            hooks.on_checkpoint(state);
        }
        if (hooks.should_stop && hooks.should_stop(r)) break;
    }
    return history;
}

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg, const Vocabulary* vocab,
                           const NormStats* global_stats) {
    Checkpoint ckpt;
    ckpt.params = state.params;
    if (state.quantizer) {
        store_quantizer(ckpt.params, *state.quantizer);
    }
    ckpt.meta = Json{{"stage", std::string(to_string(cfg.stage))},
                     {"step", state.step},
                     {"model", cfg.model.to_json()},
                     {"trainable", cfg.trainable.to_string()},
                     {"norm", std::string(to_string(cfg.norm))},
                     {"seed", cfg.seed}};
    if (vocab) ckpt.meta["vocab"] = vocab->to_json();
    if (global_stats) {
        ckpt.meta["norm_stats"] = {
            {"mean", std::vector<double>(global_stats->mean.data(), global_stats->mean.data() + global_stats->mean.size())},
            {"std", std::vector<double>(global_stats->std.data(), global_stats->std.data() + global_stats->std.size())}};
    }
    return ckpt;
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("model")) throw ValidationError("checkpoint has no model config");
    return ModelConfig::from_json(ckpt.meta["model"]);
}

std::optional<Vocabulary> checkpoint_vocab(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("vocab")) return std::nullopt;
    return Vocabulary::from_json(ckpt.meta["vocab"]);
}

std::optional<NormStats> checkpoint_norm_stats(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("norm_stats")) return std::nullopt;
    const auto mean = ckpt.meta["norm_stats"]["mean"].get<std::vector<double>>();
    const auto sd = ckpt.meta["norm_stats"]["std"].get<std::vector<double>>();
    NormStats s;
    s.mean = Eigen::Map<const RowVector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.std = Eigen::Map<const RowVector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    return s;
}

NormMode checkpoint_norm_mode(const Checkpoint& ckpt) {
    return parse_norm_mode(ckpt.meta.value("norm", std::string("utterance")));
}

ParameterSet warm_start_scd(const Checkpoint& pretrained, const ModelConfig& cfg) {
    ParameterSet fresh = init_parameters(cfg);
    std::string problems;
    for (auto& e : fresh.entries()) {
        if (e.name.starts_with(kDecoderPrefix)) continue;
        if (!pretrained.params.contains(e.name)) {
            problems += "\n  missing " + e.name;
            continue;
        }
        const auto& src = pretrained.params.at(e.name);
        if (src.rows() != e.value.rows() || src.cols() != e.value.cols()) {
            problems += "\n  " + e.name + ": checkpoint " + std::to_string(src.rows()) + "x" +
                        std::to_string(src.cols()) + ", model " + std::to_string(e.value.rows()) + "x" +
                        std::to_string(e.value.cols());
            continue;
        }
        e.value = src;
    }
    if (!problems.empty()) {
        throw ValidationError("checkpoint is incompatible with the model config:" + problems);
    }
    return fresh;
}

LogPosteriorMatrix compute_posteriors(const ParameterSet& params, const ModelConfig& cfg, const Matrix& features,
                                      int language_id) {
    const ForwardPass pass = encode(params, cfg, features, language_id);
    return LogPosteriorMatrix{decoder_projection(params, pass.hidden),
                              kDefaultFrameShiftSeconds * kDownsampleFactor};
}

std::optional<long> steps_to_threshold(std::span<const StepResult> history, double threshold, int window) {
    if (window < 1) window = 1;
    double sum = 0.0;
    for (std::size_t i = 0; i < history.size(); ++i) {
        sum += history[i].loss;
        if (i >= static_cast<std::size_t>(window)) sum -= history[i - static_cast<std::size_t>(window)].loss;
        if (i + 1 >= static_cast<std::size_t>(window) && sum / window <= threshold) {
            return history[i].step;
        }
    }
    return std::nullopt;
}

std::string training_log_line(const StepResult& r) {
    return Json{{"step", r.step}, {"loss", r.loss}, {"lr_enc", r.lr_enc}, {"lr_dec", r.lr_dec}, {"skipped", r.skipped}}
        .dump();
}

} // namespace scdlab
