#include "dggn/config.hpp"

#include <functional>
#include <map>

namespace dggn {
namespace {

using nlohmann::json;
using Setter = std::function<void(const json&)>;

template <typename T>
T get_as(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': unexpected value " + v.dump());
    }
}

void apply(const json& j, const std::string& where, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown key '" + where + "." + key + "'");
        it->second(value);
    }
}

}  // namespace

json to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"feature_dim", c.feature_dim},
                {"input_dim", c.input_dim},
                {"way", c.way},
                {"shot", c.shot},
                {"query", c.query},
                {"allow_unbalanced", c.allow_unbalanced},
                {"embedding", c.embedding == EmbeddingKind::mlp ? "mlp" : "identity"},
                {"embed_hidden", c.embed_hidden},
                {"bias", c.bias},
                {"normalize_aggregation", c.normalize_aggregation},
                {"loss_layers", c.loss_layers == LossLayers::all ? "all" : "final"}};
}

json to_json(const OptimConfig& c) {
    return json{{"lr", c.lr},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_decay_every", c.lr_decay_every},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"batch_size", c.batch_size},
                {"max_iterations", c.max_iterations}};
}

void merge_json(ModelConfig& c, const json& j, const std::string& w) {
    auto key = [&](const char* k) { return w + "." + k; };
    apply(j, w,
          {{"num_layers", [&](const json& v) { c.num_layers = get_as<std::size_t>(v, key("num_layers")); }},
           {"feature_dim", [&](const json& v) { c.feature_dim = get_as<std::size_t>(v, key("feature_dim")); }},
           {"input_dim", [&](const json& v) { c.input_dim = get_as<std::size_t>(v, key("input_dim")); }},
           {"way", [&](const json& v) { c.way = get_as<std::size_t>(v, key("way")); }},
           {"shot", [&](const json& v) { c.shot = get_as<std::size_t>(v, key("shot")); }},
           {"query", [&](const json& v) { c.query = get_as<std::size_t>(v, key("query")); }},
           {"allow_unbalanced",
            [&](const json& v) { c.allow_unbalanced = get_as<bool>(v, key("allow_unbalanced")); }},
           {"embedding",
            [&](const json& v) {
                const auto s = get_as<std::string>(v, key("embedding"));
                if (s == "identity")
                    c.embedding = EmbeddingKind::identity;
                else if (s == "mlp")
                    c.embedding = EmbeddingKind::mlp;
                else
                    throw ConfigError("key '" + key("embedding") + "': expected identity|mlp, got " + s);
            }},
           {"embed_hidden", [&](const json& v) { c.embed_hidden = get_as<std::size_t>(v, key("embed_hidden")); }},
           {"bias", [&](const json& v) { c.bias = get_as<bool>(v, key("bias")); }},
           {"normalize_aggregation",
            [&](const json& v) { c.normalize_aggregation = get_as<bool>(v, key("normalize_aggregation")); }},
           {"loss_layers", [&](const json& v) {
                const auto s = get_as<std::string>(v, key("loss_layers"));
                if (s == "final")
                    c.loss_layers = LossLayers::final_only;
                else if (s == "all")
                    c.loss_layers = LossLayers::all;
                else
                    throw ConfigError("key '" + key("loss_layers") + "': expected final|all, got " + s);
            }}});
}

void merge_json(OptimConfig& c, const json& j, const std::string& w) {
    auto key = [&](const char* k) { return w + "." + k; };
    apply(j, w,
          {{"lr", [&](const json& v) { c.lr = get_as<double>(v, key("lr")); }},
           {"lr_decay_factor", [&](const json& v) { c.lr_decay_factor = get_as<double>(v, key("lr_decay_factor")); }},
           {"lr_decay_every", [&](const json& v) { c.lr_decay_every = get_as<std::uint64_t>(v, key("lr_decay_every")); }},
           {"weight_decay", [&](const json& v) { c.weight_decay = get_as<double>(v, key("weight_decay")); }},
           {"beta1", [&](const json& v) { c.beta1 = get_as<double>(v, key("beta1")); }},
           {"beta2", [&](const json& v) { c.beta2 = get_as<double>(v, key("beta2")); }},
           {"eps", [&](const json& v) { c.eps = get_as<double>(v, key("eps")); }},
           {"batch_size", [&](const json& v) { c.batch_size = get_as<std::size_t>(v, key("batch_size")); }},
           {"max_iterations",
            [&](const json& v) { c.max_iterations = get_as<std::uint64_t>(v, key("max_iterations")); }}});
}

}  // namespace dggn
