#include "iflow/config.hpp"

#include <fstream>
#include <sstream>

namespace iflow {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof())
        throw ConfigError("config: bad value for " + key + ": '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

std::vector<float> parse_float_list(const std::string& key, const std::string& value) {
    std::vector<float> out;
    std::istringstream is(value);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(parse_num<float>(key, trim(tok)));
    return out;
}

}  // namespace

void Settings::apply(const std::string& key, const std::string& value) {
    if (key == "model.layers") model.num_layers = parse_num<int>(key, value);
    else if (key == "model.kernel") model.kernel_size = parse_num<int>(key, value);
    else if (key == "model.channels") model.hidden_channels = parse_num<int>(key, value);
    else if (key == "model.seed") model.seed = parse_num<std::uint64_t>(key, value);
    else if (key == "model.detour_weights") model.detour_weights = parse_float_list(key, value);
    else if (key == "loss.use_ld") train.use_ld = parse_bool(key, value);
    else if (key == "input.use_edges") train.use_edges = parse_bool(key, value);
    else if (key == "train.lr") {
        train.lr = parse_num<double>(key, value);
        lr_explicit = true;
    }
    else if (key == "train.patience") train.patience = parse_num<std::int64_t>(key, value);
    else if (key == "train.rounds") train.rounds = parse_num<int>(key, value);
    else if (key == "train.val_interval") train.val_interval = parse_num<std::int64_t>(key, value);
    else if (key == "train.max_steps") train.max_steps = parse_num<std::int64_t>(key, value);
    else if (key == "train.seed") train.seed = parse_num<std::uint64_t>(key, value);
    else if (key == "train.flip_prob") train.flip_prob = parse_num<double>(key, value);
    else if (key == "train.improve_tol") train.improve_tol = parse_num<double>(key, value);
    else if (key == "train.fresh_adam") train.fresh_adam = parse_bool(key, value);
    else if (key == "data.train") train.train_manifest = value;
    else if (key == "data.val") train.val_manifest = value;
    else if (key == "synth.kind") {
        if (value != "shapes" && value != "kanizsa")
            throw ConfigError("config: synth.kind must be 'shapes' or 'kanizsa'");
        synth_kind = value;
    }
    else if (key == "synth.count") synth.count = parse_num<int>(key, value);
    else if (key == "synth.width") synth.width = parse_num<int>(key, value);
    else if (key == "synth.height") synth.height = parse_num<int>(key, value);
    else if (key == "synth.shapes") synth.num_shapes = parse_num<int>(key, value);
    else if (key == "synth.disp_range") synth.disp_range = parse_num<float>(key, value);
    else if (key == "synth.missing_frac") synth.missing_frac = parse_num<float>(key, value);
    else if (key == "synth.noise_frac") synth.noise_frac = parse_num<float>(key, value);
    else if (key == "synth.noise_mag") synth.noise_mag = parse_num<float>(key, value);
    else if (key == "synth.seed") synth.seed = parse_num<std::uint64_t>(key, value);
    else if (key == "kanizsa.size") kanizsa.size = parse_num<int>(key, value);
    else if (key == "kanizsa.square_side") kanizsa.square_side = parse_num<float>(key, value);
    else if (key == "kanizsa.disc_radius") kanizsa.disc_radius = parse_num<float>(key, value);
    else if (key == "kanizsa.band") kanizsa.band_halfwidth = parse_num<float>(key, value);
    else if (key == "kanizsa.inner_u") kanizsa_inner_u = parse_num<float>(key, value);
    else if (key == "kanizsa.inner_v") kanizsa_inner_v = parse_num<float>(key, value);
    else if (key == "kanizsa.bg_u") kanizsa_bg_u = parse_num<float>(key, value);
    else if (key == "kanizsa.bg_v") kanizsa_bg_v = parse_num<float>(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

void Settings::finalize() {
    train.model = model;
    model.validate();
    synth.validate();
}

std::string Settings::resolved() const {
    std::ostringstream os;
    os.precision(17);
    os << "model.layers = " << model.num_layers << '\n';
    os << "model.kernel = " << model.kernel_size << '\n';
    os << "model.channels = " << model.hidden_channels << '\n';
    os << "model.seed = " << model.seed << '\n';
    if (!model.detour_weights.empty()) {
        os << "model.detour_weights = ";
        for (std::size_t i = 0; i < model.detour_weights.size(); ++i)
            os << (i ? "," : "") << model.detour_weights[i];
        os << '\n';
    }
    os << "loss.use_ld = " << (train.use_ld ? "true" : "false") << '\n';
    os << "input.use_edges = " << (train.use_edges ? "true" : "false") << '\n';
    os << "train.lr = " << train.lr << '\n';
    os << "train.patience = " << train.patience << '\n';
    os << "train.rounds = " << train.rounds << '\n';
    os << "train.val_interval = " << train.val_interval << '\n';
    os << "train.max_steps = " << train.max_steps << '\n';
    os << "train.seed = " << train.seed << '\n';
    os << "train.flip_prob = " << train.flip_prob << '\n';
    os << "train.improve_tol = " << train.improve_tol << '\n';
    os << "train.fresh_adam = " << (train.fresh_adam ? "true" : "false") << '\n';
    if (!train.train_manifest.empty()) os << "data.train = " << train.train_manifest << '\n';
    if (!train.val_manifest.empty()) os << "data.val = " << train.val_manifest << '\n';
    os << "synth.kind = " << synth_kind << '\n';
    os << "synth.count = " << synth.count << '\n';
    os << "synth.width = " << synth.width << '\n';
    os << "synth.height = " << synth.height << '\n';
    os << "synth.shapes = " << synth.num_shapes << '\n';
    os << "synth.disp_range = " << synth.disp_range << '\n';
    os << "synth.missing_frac = " << synth.missing_frac << '\n';
    os << "synth.noise_frac = " << synth.noise_frac << '\n';
    os << "synth.noise_mag = " << synth.noise_mag << '\n';
    os << "synth.seed = " << synth.seed << '\n';
    if (synth_kind == "kanizsa") {
        os << "kanizsa.size = " << kanizsa.size << '\n';
        os << "kanizsa.square_side = " << kanizsa.square_side << '\n';
        os << "kanizsa.disc_radius = " << kanizsa.disc_radius << '\n';
        os << "kanizsa.band = " << kanizsa.band_halfwidth << '\n';
        os << "kanizsa.inner_u = " << kanizsa_inner_u << '\n';
        os << "kanizsa.inner_v = " << kanizsa_inner_v << '\n';
        os << "kanizsa.bg_u = " << kanizsa_bg_u << '\n';
        os << "kanizsa.bg_v = " << kanizsa_bg_v << '\n';
    }
    return os.str();
}

Settings load_settings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    Settings s;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        s.apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return s;
}

void apply_overrides(Settings& s, const std::vector<std::string>& kv) {
    for (const auto& item : kv) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + item + "'");
        s.apply(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
}

}  // namespace iflow
