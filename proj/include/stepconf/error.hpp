#pragma once

#include <exception>
#include <string>
#include <utility>

#include <json.hpp>

namespace stepconf {

// Failure category; the CLI maps these onto process exit codes.
enum class ErrKind {
  Usage,     // bad flags or config values
  Data,      // malformed input or violated data contract
  Provider,  // similarity / entailment / LLM transport failure
  Io,        // filesystem failure
};

class Error : public std::exception {
 public:
  Error(ErrKind kind, std::string code, std::string message,
        nlohmann::json detail = nlohmann::json::object())
      : kind_(kind),
        code_(std::move(code)),
        message_(std::move(message)),
        detail_(std::move(detail)) {}

  ErrKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }
  const char* what() const noexcept override { return message_.c_str(); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"code", code_}, {"message", message_}};
    j["kind"] = kind_ == ErrKind::Usage      ? "usage"
                : kind_ == ErrKind::Data     ? "data"
                : kind_ == ErrKind::Provider ? "provider"
                                             : "io";
    if (!detail_.empty()) j["detail"] = detail_;
    return j;
  }

 private:
  ErrKind kind_;
  std::string code_;
  std::string message_;
  nlohmann::json detail_;
};

}  // namespace stepconf
