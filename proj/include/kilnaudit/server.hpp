#ifndef KILNAUDIT_SERVER_HPP
#define KILNAUDIT_SERVER_HPP

#include "kilnaudit/store.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace kilnaudit::service {

/// Service configuration. Relative paths resolve against the config file's
/// directory. KILNAUDIT_LISTEN and KILNAUDIT_WORKSPACE override the file.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path workspace = "workspace";
    // e.g. "https://tile.openstreetmap.org/{z}/{x}/{y}.png"; empty disables /tiles.
    std::string tile_url;
    int tile_timeout_s = 10;
    // Analytic inputs; a report whose inputs are missing answers 404.
    std::optional<std::filesystem::path> rules;
    std::optional<std::filesystem::path> features_dir;
    std::optional<std::filesystem::path> production;
    std::optional<std::filesystem::path> population;
    bool skip_unknown_states = false;
    std::size_t snapshot_interval = 32;
    std::size_t page_limit = 500;
};

/// Throws ConfigError on bad values or unknown keys.
ServiceConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ServiceConfig load_config(const std::filesystem::path& file);
/// Applies the environment overrides in place.
void apply_env(ServiceConfig& config);
/// "host:port"; throws ConfigError.
std::pair<std::string, int> parse_listen(const std::string& s);

/// HTTP front end over a workspace. See README for the routes.
class Server {
public:
    explicit Server(ServiceConfig config);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds to the configured address (port 0 picks a free port) and returns
    /// the bound port.
    int bind();
    /// Serves until stop(); call after bind().
    void run();
    void stop();

    ValidationStore& store();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace kilnaudit::service

#endif
