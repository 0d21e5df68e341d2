#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rhetor {

// Externalized prompt template with {name} slots. Replacement is plain
// substring substitution of the named slots; any other braces in the
// template body are left untouched.
struct PromptTemplate {
  std::string id;
  std::string body;

  // Throws ConfigError if a required slot never appears in the body.
  void require_slots(const std::vector<std::string>& slots) const;

  std::string render(const std::map<std::string, std::string>& slots) const;
};

PromptTemplate load_template_file(const std::filesystem::path& path,
                                  const std::string& id);

}  // namespace rhetor
