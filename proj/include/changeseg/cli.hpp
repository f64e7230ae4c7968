#pragma once

namespace changeseg {

/// Entry point behind the `changeseg` binary; split out so tests can drive
/// the command surface in-process.
int cli_main(int argc, char** argv);

}  // namespace changeseg
