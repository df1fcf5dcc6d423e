// Convenience header: the whole library.
#pragma once

#include "alcofm/autodiff.hpp"
#include "alcofm/config.hpp"
#include "alcofm/encoders.hpp"
#include "alcofm/fusion.hpp"
#include "alcofm/gradcheck.hpp"
#include "alcofm/gradsuite.hpp"
#include "alcofm/harness.hpp"
#include "alcofm/headcalib.hpp"
#include "alcofm/hexgrid.hpp"
#include "alcofm/io.hpp"
#include "alcofm/layers.hpp"
#include "alcofm/model.hpp"
#include "alcofm/params.hpp"
#include "alcofm/pipeline.hpp"
#include "alcofm/spatial.hpp"
#include "alcofm/synth.hpp"
#include "alcofm/temporal.hpp"
#include "alcofm/tensor.hpp"
