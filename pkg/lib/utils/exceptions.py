class MetaCLError(Exception):
    """元持续学习框架基础异常类"""
    pass

class ConfigError(MetaCLError):
    """配置相关错误"""
    pass

class ShapeError(MetaCLError):
    """张量形状不匹配"""
    def __init__(self, primitive: str, *shapes):
        shape_text = ' 与 '.join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: 形状不匹配 {shape_text}")
        self.primitive = primitive
        self.shapes = shapes

class NumericError(MetaCLError):
    """出现NaN或Inf等非有限数值"""
    pass

class GraphError(MetaCLError):
    """计算图使用错误"""
    pass

class DataError(MetaCLError):
    """数据加载或切分错误"""
    def __init__(self, message: str, path: str = None, line: int = None):
        location = ''
        if path is not None:
            location = f" ({path}" + (f":{line}" if line is not None else '') + ")"
        super().__init__(f"{message}{location}")
        self.path = path
        self.line = line

class CheckpointError(MetaCLError):
    """检查点读写相关错误"""
    pass

class MetaGradientError(MetaCLError):
    """元梯度计算相关错误"""
    pass

class OptimizerStateError(MetaCLError):
    """优化器状态被重复使用"""
    pass

class FreezeViolationError(MetaCLError):
    """内循环修改了被冻结的表示网络参数"""
    pass

class MetricError(MetaCLError):
    """评价指标计算错误"""
    pass

class ReportError(MetaCLError):
    """报告生成相关错误"""
    pass
