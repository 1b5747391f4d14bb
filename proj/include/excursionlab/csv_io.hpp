#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "excursionlab/panel.hpp"

namespace excursionlab {

// Long-format panel schema: required columns id, t, avail, prob, treat,
// outcome; history columns prefixed h_, moderator columns prefixed f_.
// One row per (id, t) with t contiguous 1..T per id. UTF-8, '.' decimal,
// header row required. Doubles are written with 17 significant digits so a
// write/load round trip is bit exact for finite values.
struct PanelCsvSchema {
  std::string id = "id";
  std::string t = "t";
  std::string avail = "avail";
  std::string prob = "prob";
  std::string treat = "treat";
  std::string outcome = "outcome";
  std::string history_prefix = "h_";
  std::string moderator_prefix = "f_";
};

Panel load_panel_csv(const std::string& path, const PanelCsvSchema& schema = {});
Panel load_panel_csv(std::istream& in, const PanelCsvSchema& schema = {});

void write_panel_csv(const Panel& panel, const std::string& path,
                     const PanelCsvSchema& schema = {});
void write_panel_csv(const Panel& panel, std::ostream& out,
                     const PanelCsvSchema& schema = {});

}  // namespace excursionlab
