#include "legato/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace legato::log {

namespace {

Level g_level = Level::Warn;
std::once_flag g_init;
std::mutex g_mutex;

void init_from_env() {
  const char* env = std::getenv("LEGATO_LOG");
  if (!env) return;
  if (!std::strcmp(env, "error")) g_level = Level::Error;
  else if (!std::strcmp(env, "warn")) g_level = Level::Warn;
  else if (!std::strcmp(env, "info")) g_level = Level::Info;
  else if (!std::strcmp(env, "debug")) g_level = Level::Debug;
  else std::fprintf(stderr, "[legato] warn: unknown LEGATO_LOG value '%s'\n", env);
}

void write(Level lv, const char* tag, const std::string& msg) {
  std::call_once(g_init, init_from_env);
  if (lv > g_level) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "[legato] %s: %s\n", tag, msg.c_str());
}

}  // namespace

Level level() {
  std::call_once(g_init, init_from_env);
  return g_level;
}

void set_level(Level lv) {
  std::call_once(g_init, init_from_env);
  g_level = lv;
}

void error(const std::string& msg) { write(Level::Error, "error", msg); }
void warn(const std::string& msg) { write(Level::Warn, "warn", msg); }
void info(const std::string& msg) { write(Level::Info, "info", msg); }
void debug(const std::string& msg) { write(Level::Debug, "debug", msg); }

}  // namespace legato::log
