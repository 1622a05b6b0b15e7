import argparse
import sys
from lib.core.runner import COMMANDS, run_command
from lib.utils.exceptions import MetaCLError
from loguru import logger

def parse_args(argv=None):
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description='元持续学习实验框架')
    parser.add_argument(
        'command',
        choices=COMMANDS,
        help='要执行的命令'
    )
    parser.add_argument(
        '-c', '--config',
        help='实验配置文件路径（YAML）'
    )
    parser.add_argument(
        '--checkpoint',
        help='test 使用的检查点文件，或包含 theta_epoch*.ckpt 的目录'
    )
    parser.add_argument(
        '-o', '--out',
        help='输出目录，覆盖 experiment.output_dir'
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='随机种子，覆盖 meta.seed'
    )
    parser.add_argument(
        '--runs',
        help='report 汇总的运行目录，缺省为输出目录'
    )
    return parser.parse_args(argv)

def main(argv=None):
    """主函数"""
    try:
        args = parse_args(argv)
        run_command(args.command, args.config, args.checkpoint, args.out, args.seed, args.runs)
    except MetaCLError as e:
        logger.error(str(e))
        sys.exit(1)
    except KeyboardInterrupt:
        logger.warning("执行被用户中断")
        sys.exit(1)
    except Exception:
        logger.exception("执行过程中发生未知错误")
        sys.exit(1)

if __name__ == '__main__':
    main()
