#pragma once

#include "core.hpp"
#include "image.hpp"
#include "data.hpp"
#include "sensoraug.hpp"
#include "spectro.hpp"
#include "imageaug.hpp"
#include "nn.hpp"
#include "moco.hpp"
#include "probe.hpp"
#include "config.hpp"
#include "pipeline.hpp"
