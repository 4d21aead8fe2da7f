#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "simco/shapegen.hpp"

namespace simco::shapegen {

using Json = nlohmann::ordered_json;

Json to_json(const GeneratorConfig& config);
GeneratorConfig config_from_json(const Json& j);
GeneratorConfig read_config(const std::filesystem::path& path);

Json to_json(const ObjectType& type);
ObjectType type_from_json(const Json& j);

Json to_json(const ImageRecord& record);
ImageRecord record_from_json(const Json& j);

Json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const Json& j);

std::string serialize(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace simco::shapegen
