#include "rhetor/prompts.hpp"

#include <fstream>
#include <sstream>

#include "rhetor/errors.hpp"

namespace rhetor {

void PromptTemplate::require_slots(const std::vector<std::string>& slots) const {
  for (const auto& slot : slots) {
    if (body.find("{" + slot + "}") == std::string::npos) {
      throw ConfigError("prompt template '" + id + "' is missing the {" +
                        slot + "} slot");
    }
  }
}

std::string PromptTemplate::render(
    const std::map<std::string, std::string>& slots) const {
  std::string out = body;
  for (const auto& [name, value] : slots) {
    const std::string needle = "{" + name + "}";
    size_t pos = 0;
    while ((pos = out.find(needle, pos)) != std::string::npos) {
      out.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  return out;
}

PromptTemplate load_template_file(const std::filesystem::path& path,
                                  const std::string& id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open prompt template file: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string body = buf.str();
  if (body.empty()) {
    throw ConfigError("prompt template file is empty: " + path.string());
  }
  return PromptTemplate{id, std::move(body)};
}

}  // namespace rhetor
