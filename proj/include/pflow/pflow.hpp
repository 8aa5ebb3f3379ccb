#pragma once

#include "pflow/dataset.hpp"
#include "pflow/error.hpp"
#include "pflow/eval.hpp"
#include "pflow/flow.hpp"
#include "pflow/forest.hpp"
#include "pflow/io.hpp"
#include "pflow/labeling.hpp"
#include "pflow/meter.hpp"
#include "pflow/packet.hpp"
#include "pflow/pcap.hpp"
#include "pflow/pipeline.hpp"
#include "pflow/preprocess.hpp"
#include "pflow/rng.hpp"
#include "pflow/synth.hpp"
