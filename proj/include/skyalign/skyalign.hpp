#pragma once

#include "skyalign/common.hpp"
#include "skyalign/config.hpp"
#include "skyalign/dataset.hpp"
#include "skyalign/ensemble.hpp"
#include "skyalign/experiment.hpp"
#include "skyalign/model.hpp"
#include "skyalign/objectives.hpp"
#include "skyalign/pose_geometry.hpp"
#include "skyalign/retrieval.hpp"
#include "skyalign/trainer.hpp"
