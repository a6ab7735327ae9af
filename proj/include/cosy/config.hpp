#pragma once

// Run configuration: a fixed schema of typed keys, merged from defaults, a
// key = value text file and command-line overrides.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cosy/discriminator.hpp"
#include "cosy/generator.hpp"
#include "cosy/toyset.hpp"

namespace cosy {

enum class KeyType { Int, Float, Bool, String };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string doc;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_schema();
/// One line per key: name, type, default and description.
std::string config_help();

class RunConfig {
public:
    RunConfig();  // schema defaults

    /// Parses `key = value` lines; '#' starts a comment. Throws ConfigError on
    /// unknown keys, malformed lines or values that do not parse.
    void merge_text(const std::string& text);
    void merge_file(const std::filesystem::path& path);
    /// Applies one `key=value` override.
    void set(const std::string& key, const std::string& value);

    std::int64_t get_int(const std::string& key) const;
    double get_float(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_string(const std::string& key) const;

    /// Canonical text: keys sorted, values normalized.
    std::string canonical() const;
    /// FNV-1a 64 of the canonical text.
    std::uint64_t digest() const;
    /// Digest over the keys that fix the network architecture only.
    std::uint64_t model_digest() const;

    GeneratorConfig generator() const;
    DiscriminatorConfig discriminator() const;
    DatasetConfig dataset() const;

    /// Rejects out-of-range values (probabilities, weights, sizes).
    void validate() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    const ConfigKey& key(const std::string& name) const;
    std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace cosy
