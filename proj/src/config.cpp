#include "pathcons/config.hpp"

#include <fstream>

#include <json.hpp>

#include "pathcons/sha256.hpp"

namespace pathcons {

using nlohmann::json;

namespace {

json to_json(const BackboneSpec& s) {
    return json{{"n_stages", s.n_stages},
                {"channels_2d", s.channels_2d},
                {"channels_3d", s.channels_3d},
                {"convs_per_stage", s.convs_per_stage},
                {"kernel_2d", s.kernel_2d},
                {"kernel_3d", s.kernel_3d},
                {"image_channels", s.image_channels},
                {"voxel_channels", s.voxel_channels}};
}

BackboneSpec backbone_from_json(const json& j) {
    BackboneSpec s;
    s.n_stages = j.value("n_stages", s.n_stages);
    s.channels_2d = j.value("channels_2d", s.channels_2d);
    s.channels_3d = j.value("channels_3d", s.channels_3d);
    s.convs_per_stage = j.value("convs_per_stage", s.convs_per_stage);
    s.kernel_2d = j.value("kernel_2d", s.kernel_2d);
    s.kernel_3d = j.value("kernel_3d", s.kernel_3d);
    s.image_channels = j.value("image_channels", s.image_channels);
    s.voxel_channels = j.value("voxel_channels", s.voxel_channels);
    return s;
}

json to_json(const DatasetSpec& s) {
    return json{{"n_train", s.n_train},
                {"n_val", s.n_val},
                {"seed", s.seed},
                {"lidar_points", s.lidar_points},
                {"lidar_noise_sigma", s.lidar_noise_sigma},
                {"color_noise_sigma", s.color_noise_sigma},
                {"n_classes", s.n_classes},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"grid",
                 {{"origin", {s.grid.origin[0], s.grid.origin[1], s.grid.origin[2]}},
                  {"voxel_size", s.grid.voxel_size},
                  {"dims", {s.grid.dims[0], s.grid.dims[1], s.grid.dims[2]}}}},
                {"camera",
                 {{"fx", s.camera.fx},
                  {"fy", s.camera.fy},
                  {"cx", s.camera.cx},
                  {"cy", s.camera.cy},
                  {"rotation",
                   {s.camera.rotation(0, 0), s.camera.rotation(0, 1), s.camera.rotation(0, 2),
                    s.camera.rotation(1, 0), s.camera.rotation(1, 1), s.camera.rotation(1, 2),
                    s.camera.rotation(2, 0), s.camera.rotation(2, 1), s.camera.rotation(2, 2)}},
                  {"translation", {s.camera.translation[0], s.camera.translation[1], s.camera.translation[2]}},
                  {"image_h", s.camera.image_h},
                  {"image_w", s.camera.image_w}}}};
}

DatasetSpec dataset_from_json(const json& j) {
    DatasetSpec s = DatasetSpec::defaults();
    s.n_train = j.value("n_train", s.n_train);
    s.n_val = j.value("n_val", s.n_val);
    s.seed = j.value("seed", s.seed);
    s.lidar_points = j.value("lidar_points", s.lidar_points);
    s.lidar_noise_sigma = j.value("lidar_noise_sigma", s.lidar_noise_sigma);
    s.color_noise_sigma = j.value("color_noise_sigma", s.color_noise_sigma);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.min_objects = j.value("min_objects", s.min_objects);
    s.max_objects = j.value("max_objects", s.max_objects);
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        if (g.contains("origin")) {
            for (int a = 0; a < 3; ++a) s.grid.origin[a] = g.at("origin").at(a).get<double>();
        }
        s.grid.voxel_size = g.value("voxel_size", s.grid.voxel_size);
        if (g.contains("dims")) {
            for (int a = 0; a < 3; ++a) s.grid.dims[a] = g.at("dims").at(a).get<int>();
        }
    }
    if (j.contains("camera")) {
        const json& c = j.at("camera");
        s.camera.fx = c.value("fx", s.camera.fx);
        s.camera.fy = c.value("fy", s.camera.fy);
        s.camera.cx = c.value("cx", s.camera.cx);
        s.camera.cy = c.value("cy", s.camera.cy);
        if (c.contains("rotation")) {
            for (int r = 0; r < 3; ++r) {
                for (int q = 0; q < 3; ++q) s.camera.rotation(r, q) = c.at("rotation").at(3 * r + q).get<double>();
            }
        }
        if (c.contains("translation")) {
            for (int a = 0; a < 3; ++a) s.camera.translation[a] = c.at("translation").at(a).get<double>();
        }
        s.camera.image_h = c.value("image_h", s.camera.image_h);
        s.camera.image_w = c.value("image_w", s.camera.image_w);
    }
    return s;
}

json to_json(const ConsistencyConfig& c) {
    return json{{"loss_type", c.loss_type == ConsistencyLossType::Cosine ? "cosine" : "l1"},
                {"alpha", c.alpha},
                {"active_stages", c.active_stages},
                {"variant", c.variant == ConsistencyVariant::Dense ? "dense" : "sparse_anchored"},
                {"stop_3d_gradients", c.stop_3d_gradients},
                {"stagewise_scope", c.stagewise_scope},
                {"route_prev_lifting", c.route_prev_lifting}};
}

ConsistencyConfig consistency_from_json(const json& j) {
    ConsistencyConfig c;
    const std::string loss = j.value("loss_type", "cosine");
    if (loss == "cosine") c.loss_type = ConsistencyLossType::Cosine;
    else if (loss == "l1") c.loss_type = ConsistencyLossType::L1;
    else throw ConfigError("unknown consistency loss_type '" + loss + "'");
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("active_stages")) {
        c.active_stages.clear();
        for (const auto& t : j.at("active_stages")) c.active_stages.insert(t.get<int>());
    }
    const std::string variant = j.value("variant", "dense");
    if (variant == "dense") c.variant = ConsistencyVariant::Dense;
    else if (variant == "sparse_anchored") c.variant = ConsistencyVariant::SparseAnchored;
    else throw ConfigError("unknown consistency variant '" + variant + "'");
    c.stop_3d_gradients = j.value("stop_3d_gradients", c.stop_3d_gradients);
    c.stagewise_scope = j.value("stagewise_scope", c.stagewise_scope);
    c.route_prev_lifting = j.value("route_prev_lifting", c.route_prev_lifting);
    return c;
}

json to_json(const OptimizerConfig& o) {
    return json{{"lr", o.lr},           {"lr_final", o.lr_final}, {"epochs", o.epochs}, {"batch_size", o.batch_size},
                {"beta1", o.beta1},     {"beta2", o.beta2},       {"eps", o.eps}};
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig o;
    o.lr = j.value("lr", o.lr);
    o.lr_final = j.value("lr_final", o.lr_final);
    o.epochs = j.value("epochs", o.epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.eps = j.value("eps", o.eps);
    return o;
}

json config_to_json(const ExperimentConfig& cfg) {
    return json{{"schema_version", kConfigSchemaVersion},
                {"backbone", to_json(cfg.backbone)},
                {"dataset", to_json(cfg.dataset)},
                {"fusion_stages", cfg.fusion_stages},
                {"fuse_mode", cfg.fuse_mode == FuseMode::Sum ? "sum" : "concat"},
                {"query_mode", cfg.query_mode == QueryMode::Nearest ? "nearest" : "bilinear"},
                {"consistency", to_json(cfg.consistency)},
                {"optimizer", to_json(cfg.optimizer)},
                {"seeds", cfg.seeds},
                {"out_dir", cfg.out_dir}};
}

}  // namespace

void ExperimentConfig::validate() const {
    backbone.validate();
    dataset.validate();
    consistency.validate(backbone.n_stages);
    for (const int s : fusion_stages) {
        if (s < 1 || s > backbone.n_stages) {
            throw ConfigError("fusion stage " + std::to_string(s) + " outside 1..n_stages");
        }
    }
    if (optimizer.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (optimizer.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (seeds.empty()) throw ConfigError("seed list must not be empty");
    const int div = 1 << (backbone.n_stages - 1);
    if (dataset.camera.image_h % div != 0 || dataset.camera.image_w % div != 0) {
        throw ConfigError("image size must be divisible by 2^(n_stages-1)");
    }
    dataset.grid.validate(backbone.n_stages);
}

std::string ExperimentConfig::canonical_json() const {
    return config_to_json(*this).dump(2);
}

std::string ExperimentConfig::config_hash() const { return sha256_hex(canonical_json()); }

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (j.contains("config") && j.at("config").is_object()) {
        j = j.at("config");  // run manifest with an embedded config
    }
    if (!j.contains("schema_version")) throw ConfigError("config is missing mandatory schema_version");
    if (j.at("schema_version").get<int>() != kConfigSchemaVersion) {
        throw ConfigError("unsupported config schema_version");
    }
    ExperimentConfig cfg;
    try {
        if (j.contains("backbone")) cfg.backbone = backbone_from_json(j.at("backbone"));
        if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
        if (j.contains("fusion_stages")) {
            cfg.fusion_stages.clear();
            for (const auto& t : j.at("fusion_stages")) cfg.fusion_stages.insert(t.get<int>());
        }
        const std::string fuse = j.value("fuse_mode", "sum");
        if (fuse == "sum") cfg.fuse_mode = FuseMode::Sum;
        else if (fuse == "concat") cfg.fuse_mode = FuseMode::Concat;
        else throw ConfigError("unknown fuse_mode '" + fuse + "'");
        const std::string query = j.value("query_mode", "nearest");
        if (query == "nearest") cfg.query_mode = QueryMode::Nearest;
        else if (query == "bilinear") cfg.query_mode = QueryMode::Bilinear;
        else throw ConfigError("unknown query_mode '" + query + "'");
        if (j.contains("consistency")) cfg.consistency = consistency_from_json(j.at("consistency"));
        if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j.at("optimizer"));
        if (j.contains("seeds")) {
            cfg.seeds.clear();
            for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
        }
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream f(path);
    f << cfg.canonical_json() << "\n";
    if (!f) throw UsageError("failed to write config " + path.string());
}

}  // namespace pathcons
