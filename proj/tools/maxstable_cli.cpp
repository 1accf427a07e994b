// Command-line front end. Subcommands chain the library modules into
// reproducible experiment runs; every command echoes its resolved
// configuration and writes only below its --out directory.
#include <CLI11.hpp>
#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"max-stable process inference toolkit"};
  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  return 0;
}
