#include "fwrl/run_config.hpp"

namespace fwrl {

void RunConfig::validate() const {
    uav.validate();
    env.validate();
    model.validate();
    train.validate();
    if (env.history != model.history) throw ConfigError("env.history must equal model.history");
}

KeyValueFile RunConfig::to_keyvalue() const {
    KeyValueFile kv;
    kv.set("schema", kSchema);
    uav.write_keys(kv, "uav.");
    env.write_keys(kv, "env.");
    model.write_keys(kv, "model.");
    train.write_keys(kv, "train.");
    if (!pid_gains_file.empty()) kv.set("pid.gains_file", pid_gains_file);
    return kv;
}

RunConfig RunConfig::from_keyvalue(const KeyValueFile& kv, const std::filesystem::path& base_dir) {
    kv.require_schema(kSchema);
    RunConfig c;
    KeyValueFile uav_kv;
    c.uav.write_keys(uav_kv, "");
    if (kv.has("uav.file")) {
        std::filesystem::path p = kv.get_string("uav.file");
        if (p.is_relative()) p = base_dir / p;
        const KeyValueFile file = KeyValueFile::load(p);
        file.require_schema(dynamics::UavParams::kSchema);
        for (const auto& e : file.entries()) {
            if (e.key != "schema") uav_kv.set(e.key, e.value);
        }
    }
    for (const auto& e : kv.entries()) {
        if (e.key.rfind("uav.", 0) == 0 && e.key != "uav.file") {
            const std::string name = e.key.substr(4);
            if (!uav_kv.has(name)) throw ConfigError("unknown airframe parameter: " + e.key);
            uav_kv.set(name, e.value);
        }
    }
    c.uav = dynamics::UavParams::from_keyvalue(uav_kv);
    c.env = env::EpisodeConfig::from_keyvalue(kv, "env.");
    c.model = nnet::PolicyConfig::from_keyvalue(kv, "model.");
    if (!kv.has("env.history")) c.env.history = c.model.history;
    c.train = sac::TrainerConfig::from_keyvalue(kv, "train.");
    if (kv.has("pid.gains_file")) {
        std::filesystem::path p = kv.get_string("pid.gains_file");
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.pid_gains_file = p.string();
    }
    c.validate();
    return c;
}

RunConfig RunConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
    return from_keyvalue(KeyValueFile::parse(text), base_dir);
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    return from_keyvalue(KeyValueFile::load(path), path.parent_path());
}

bool RunConfig::operator==(const RunConfig& o) const {
    return uav == o.uav && env == o.env && model == o.model && train == o.train && pid_gains_file == o.pid_gains_file;
}

}  // namespace fwrl
