#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace weft::cli {

namespace {

void check_keys(const YAML::Node& node, const std::string& section, const std::set<std::string>& allowed) {
    if (!node.IsMap()) {
        throw ConfigError("config: section '" + section + "' must be a mapping");
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown key '" + section + "." + key + "'");
        }
    }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
    if (node[key]) {
        try {
            out = node[key].as<T>();
        } catch (const YAML::Exception& e) {
            throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

template <typename T, typename Parse>
void read_enum(const YAML::Node& node, const char* key, T& out, Parse parse) {
    if (node[key]) {
        try {
            out = parse(node[key].as<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
}

RunConfig from_node(const YAML::Node& root) {
    RunConfig cfg;
    if (!root || root.IsNull()) {
        return cfg;
    }
    check_keys(root, "<root>", {"seed", "model", "train", "task", "decode", "output"});
    read(root, "seed", cfg.seed);

    if (const auto m = root["model"]) {
        check_keys(m, "model", {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                                "rms_norm_eps", "rope_theta", "init_std", "mask_token_id", "pad_token_id"});
        read(m, "vocab_size", cfg.model.vocab_size);
        read(m, "d_model", cfg.model.d_model);
        read(m, "n_layers", cfg.model.n_layers);
        read(m, "n_heads", cfg.model.n_heads);
        read(m, "d_ff", cfg.model.d_ff);
        read(m, "max_seq_len", cfg.model.max_seq_len);
        read(m, "rms_norm_eps", cfg.model.rms_norm_eps);
        read(m, "rope_theta", cfg.model.rope_theta);
        read(m, "init_std", cfg.model.init_std);
        read(m, "mask_token_id", cfg.model.mask_token_id);
        read(m, "pad_token_id", cfg.model.pad_token_id);
    }
    if (const auto t = root["train"]) {
        check_keys(t, "train", {"loss", "scheme", "dream_p", "normalization", "lr", "linear_decay", "weight_decay",
                                "adam_beta1", "adam_beta2", "adam_eps", "clip_norm", "epochs", "max_steps",
                                "batch_size", "grad_accum", "t_lo", "t_min", "beta_floor", "log_every"});
        read_enum(t, "loss", cfg.train.loss, parse_loss_kind);
        read_enum(t, "scheme", cfg.train.scheme.kind, parse_scheme);
        read(t, "dream_p", cfg.train.dream_p);
        read_enum(t, "normalization", cfg.train.normalization, parse_normalization);
        read(t, "lr", cfg.train.lr);
        read(t, "linear_decay", cfg.train.linear_decay);
        read(t, "weight_decay", cfg.train.weight_decay);
        read(t, "adam_beta1", cfg.train.adam_beta1);
        read(t, "adam_beta2", cfg.train.adam_beta2);
        read(t, "adam_eps", cfg.train.adam_eps);
        read(t, "clip_norm", cfg.train.clip_norm);
        read(t, "epochs", cfg.train.epochs);
        read(t, "max_steps", cfg.train.max_steps);
        read(t, "batch_size", cfg.train.batch_size);
        read(t, "grad_accum", cfg.train.grad_accum);
        read(t, "t_lo", cfg.train.t_lo);
        read(t, "t_min", cfg.train.t_min);
        read(t, "beta_floor", cfg.train.beta_floor);
        read(t, "log_every", cfg.log_every);
    }
    if (const auto k = root["task"]) {
        check_keys(k, "task", {"kind", "modulus", "min_givens", "max_givens", "n_train", "n_eval"});
        read_enum(k, "kind", cfg.task.kind, parse_task);
        read(k, "modulus", cfg.task.modulus);
        read(k, "min_givens", cfg.task.min_givens);
        read(k, "max_givens", cfg.task.max_givens);
        read(k, "n_train", cfg.n_train);
        read(k, "n_eval", cfg.n_eval);
    }
    if (const auto d = root["decode"]) {
        check_keys(d, "decode", {"gen_length", "block_length", "steps"});
        read(d, "gen_length", cfg.decode.gen_length);
        read(d, "block_length", cfg.decode.block_length);
        read(d, "steps", cfg.decode.n_steps);
    }
    if (const auto o = root["output"]) {
        check_keys(o, "output", {"dir"});
        read(o, "dir", cfg.output_dir);
    }
    return cfg;
}

}  // namespace

void RunConfig::resolve() {
    model.seed = seed;
    train.seed = seed;
    decode.seed = seed;
    const Vocab& vocab = Vocab::standard();
    if (decode.gen_length == 0) {
        decode.gen_length = answer_length(task.kind, task.modulus);
    }
    if (decode.block_length == 0) {
        decode.block_length = std::min<std::size_t>(decode.gen_length, 8);
    }
    try {
        model.validate();
        train.validate();
        decode.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (model.vocab_size != vocab.size() || model.mask_token_id != vocab.mask_id() ||
        model.pad_token_id != vocab.pad_id()) {
        throw ConfigError("config: model vocab_size/mask_token_id/pad_token_id must match the task vocabulary (" +
                          std::to_string(vocab.size()) + "/" + std::to_string(vocab.mask_id()) + "/" +
                          std::to_string(vocab.pad_id()) + ")");
    }
    if (task.kind == TaskKind::modadd && (task.modulus < 2 || task.modulus > 50)) {
        throw ConfigError("config: task.modulus must lie in [2, 50]");
    }
    if (task.kind == TaskKind::sudoku4 &&
        (task.min_givens < 4 || task.max_givens > 12 || task.min_givens > task.max_givens)) {
        throw ConfigError("config: sudoku givens must satisfy 4 <= min_givens <= max_givens <= 12");
    }
    if (n_train == 0) {
        throw ConfigError("config: task.n_train must be positive");
    }
    if (output_dir.empty()) {
        throw ConfigError("config: output.dir must not be empty");
    }
}

std::string RunConfig::to_yaml() const {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "seed" << YAML::Value << seed;

    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "vocab_size" << YAML::Value << model.vocab_size;
    out << YAML::Key << "d_model" << YAML::Value << model.d_model;
    out << YAML::Key << "n_layers" << YAML::Value << model.n_layers;
    out << YAML::Key << "n_heads" << YAML::Value << model.n_heads;
    out << YAML::Key << "d_ff" << YAML::Value << model.d_ff;
    out << YAML::Key << "max_seq_len" << YAML::Value << model.max_seq_len;
    out << YAML::Key << "rms_norm_eps" << YAML::Value << model.rms_norm_eps;
    out << YAML::Key << "rope_theta" << YAML::Value << model.rope_theta;
    out << YAML::Key << "init_std" << YAML::Value << model.init_std;
    out << YAML::Key << "mask_token_id" << YAML::Value << model.mask_token_id;
    out << YAML::Key << "pad_token_id" << YAML::Value << model.pad_token_id;
    out << YAML::EndMap;

    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "loss" << YAML::Value << to_string(train.loss);
    out << YAML::Key << "scheme" << YAML::Value << to_string(train.scheme.kind);
    out << YAML::Key << "dream_p" << YAML::Value << train.dream_p;
    out << YAML::Key << "normalization" << YAML::Value << to_string(train.normalization);
    out << YAML::Key << "lr" << YAML::Value << train.lr;
    out << YAML::Key << "linear_decay" << YAML::Value << train.linear_decay;
    out << YAML::Key << "weight_decay" << YAML::Value << train.weight_decay;
    out << YAML::Key << "adam_beta1" << YAML::Value << train.adam_beta1;
    out << YAML::Key << "adam_beta2" << YAML::Value << train.adam_beta2;
    out << YAML::Key << "adam_eps" << YAML::Value << train.adam_eps;
    out << YAML::Key << "clip_norm" << YAML::Value << train.clip_norm;
    out << YAML::Key << "epochs" << YAML::Value << train.epochs;
    out << YAML::Key << "max_steps" << YAML::Value << train.max_steps;
    out << YAML::Key << "batch_size" << YAML::Value << train.batch_size;
    out << YAML::Key << "grad_accum" << YAML::Value << train.grad_accum;
    out << YAML::Key << "t_lo" << YAML::Value << train.t_lo;
    out << YAML::Key << "t_min" << YAML::Value << train.t_min;
    out << YAML::Key << "beta_floor" << YAML::Value << train.beta_floor;
    out << YAML::Key << "log_every" << YAML::Value << log_every;
    out << YAML::EndMap;

    out << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << to_string(task.kind);
    out << YAML::Key << "modulus" << YAML::Value << task.modulus;
    out << YAML::Key << "min_givens" << YAML::Value << task.min_givens;
    out << YAML::Key << "max_givens" << YAML::Value << task.max_givens;
    out << YAML::Key << "n_train" << YAML::Value << n_train;
    out << YAML::Key << "n_eval" << YAML::Value << n_eval;
    out << YAML::EndMap;

    out << YAML::Key << "decode" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "gen_length" << YAML::Value << decode.gen_length;
    out << YAML::Key << "block_length" << YAML::Value << decode.block_length;
    out << YAML::Key << "steps" << YAML::Value << decode.resolved_steps();
    out << YAML::EndMap;

    out << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dir" << YAML::Value << output_dir;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

RunConfig load_run_config_text(const std::string& text) {
    try {
        return from_node(YAML::Load(text));
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return load_run_config_text(ss.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

}  // namespace weft::cli
