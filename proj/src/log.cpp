#include "refi/log.hpp"

#include <iostream>
#include <mutex>

namespace refi::log {

namespace {
Level g_level = Level::info;
std::ostream* g_sink = &std::cerr;
std::mutex g_mutex;

const char* level_name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "info";
}

void append_escaped(std::string& out, std::string_view s) {
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }
void set_sink(std::ostream* sink) { g_sink = sink; }

void emit(Level level, std::string_view msg, std::initializer_list<Field> fields) {
  if (level < g_level || g_sink == nullptr) return;
  std::string line = "{\"level\":\"";
  line += level_name(level);
  line += "\",\"msg\":\"";
  append_escaped(line, msg);
  line += '"';
  for (const auto& [key, value] : fields) {
    line += ",\"";
    append_escaped(line, key);
    line += "\":\"";
    append_escaped(line, value);
    line += '"';
  }
  line += "}\n";
  std::lock_guard<std::mutex> lock(g_mutex);
  (*g_sink) << line;
  g_sink->flush();
}

}  // namespace refi::log
